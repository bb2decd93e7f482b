mod common;

use edaem::engine::m_step_closed_form;
use edaem::model::{ExpectationParams, SearchModel};
use edaem::objectives::Domain;
use edaem::oracle::{
    exact_em_update, exact_free_energy, exact_objective, exact_objective_gradient, exact_population,
    exact_tilted, EnumerableSpace,
};
use proptest::prelude::*;

use common::*;

const BITS3: Domain = Domain::Binary { dim: 3 };

/// `p(z) f(z)` per state, straight from `log_density`.
fn joint(model: &SearchModel, space: &EnumerableSpace) -> Vec<f64> {
    space
        .states()
        .iter()
        .zip(space.values())
        .map(|(z, f)| model.log_density(z).unwrap().exp() * f)
        .collect()
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

fn probs3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..0.95, 3)
}

/// Eight values in `[0, 5)`, at least one positive, some exactly zero.
fn table8() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.1f64..5.0], 8)
        .prop_filter("some f > 0", |v| v.iter().any(|&x| x > 0.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn free_energy_gap_equals_kl_to_tilted(p in probs3(), f in table8(), raw_q in prop::collection::vec(0.0f64..1.0, 8)) {
        let model = bern(&p);
        let space = EnumerableSpace::from_table(BITS3, f.clone()).unwrap();
        let pf = joint(&model, &space);
        let l = pf.iter().sum::<f64>().ln();
        let tilted = normalized(&pf);
        // Keep q absolutely continuous w.r.t. the tilted distribution.
        let masked: Vec<f64> = raw_q.iter().zip(&f).map(|(q, &fv)| if fv > 0.0 { q + 1e-3 } else { 0.0 }).collect();
        let q = normalized(&masked);
        let kl: f64 = q.iter().zip(&tilted).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum();
        let fe = exact_free_energy(&q, &model, &space).unwrap();
        prop_assert!(!fe.infinite);
        prop_assert!(fe.value <= l + 1e-10);
        prop_assert!((l - fe.value - kl).abs() <= 1e-10, "L {l} F {} KL {kl}", fe.value);
        prop_assert!((exact_objective(&model, &space).unwrap() - l).abs() <= 1e-12);
        let at_tilted = exact_free_energy(&tilted, &model, &space).unwrap();
        prop_assert!((at_tilted.value - l).abs() <= 1e-10);
    }

    #[test]
    fn mass_on_zero_states_gives_infinite_gap(p in probs3(), f in table8()) {
        prop_assume!(f.contains(&0.0));
        let model = bern(&p);
        let space = EnumerableSpace::from_table(BITS3, f.clone()).unwrap();
        let fe = exact_free_energy(&[0.125; 8], &model, &space).unwrap();
        prop_assert!(fe.infinite && fe.value == f64::NEG_INFINITY);
    }

    #[test]
    fn tilted_is_normalized_and_vanishes_where_f_does(p in probs3(), f in table8()) {
        let model = bern(&p);
        let space = EnumerableSpace::from_table(BITS3, f.clone()).unwrap();
        let t = exact_tilted(&model, &space).unwrap().probs;
        prop_assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for ((a, b), fv) in t.iter().zip(normalized(&joint(&model, &space))).zip(&f) {
            prop_assert!((a - b).abs() < 1e-12);
            if *fv == 0.0 {
                prop_assert_eq!(*a, 0.0);
            }
        }
    }

    #[test]
    fn exact_em_never_decreases_objective(p in probs3(), f in table8()) {
        let space = EnumerableSpace::from_table(BITS3, f).unwrap();
        let mut model = bern(&p);
        let mut prev = joint(&model, &space).iter().sum::<f64>().ln();
        for _ in 0..10 {
            model = model.with_params(&exact_em_update(&model, &space).unwrap()).unwrap();
            let next = joint(&model, &space).iter().sum::<f64>().ln();
            prop_assert!(next >= prev - 1e-12, "{prev} -> {next}");
            prev = next;
        }
    }

    #[test]
    fn whole_space_population_matches_exact_update(p in probs3(), f in table8()) {
        let model = bern(&p);
        let space = EnumerableSpace::from_table(BITS3, f).unwrap();
        let pop = exact_population(&model, &space).unwrap();
        let via_pop = m_step_closed_form(&pop, &model).unwrap();
        let exact = exact_em_update(&model, &space).unwrap();
        let tilted = normalized(&joint(&model, &space));
        // Bit j's marginal under the tilted distribution.
        let direct: Vec<f64> = (0..3)
            .map(|j| {
                space.states().iter().zip(&tilted).map(|(z, q)| q * model.sufficient_stats(z).unwrap()[j]).sum()
            })
            .collect();
        let repaired = model.repair(&ExpectationParams::new(model.family(), direct).unwrap()).unwrap();
        prop_assert!(rel_err(&via_pop.values, &exact.values) < 1e-14);
        prop_assert!(rel_err(&exact.values, &repaired.values) < 1e-12);
    }

    #[test]
    fn exact_gradient_matches_finite_differences(p in probs3(), f in table8()) {
        let model = bern(&p);
        let space = EnumerableSpace::from_table(BITS3, f).unwrap();
        let g = exact_objective_gradient(&model, &space).unwrap();
        for i in 0..3 {
            let h = 1e-6;
            let at = |d: f64| {
                let mut q = p.clone();
                q[i] += d;
                joint(&bern(&q), &space).iter().sum::<f64>().ln()
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            prop_assert!((g[i] - fd).abs() < 1e-5 * g[i].abs().max(1.0), "{g:?} vs {fd}");
        }
    }
}

#[test]
fn constant_objective_is_an_em_fixed_point() {
    let mut r = rng(9);
    for _ in 0..10 {
        let model = random_bernoulli(&mut r, 3);
        let space = EnumerableSpace::from_table(BITS3, vec![2.5; 8]).unwrap();
        let next = exact_em_update(&model, &space).unwrap();
        assert!(rel_err(&next.values, &model.params().values) < 1e-12);
        let cat = random_categorical(&mut r, 2, 3);
        let space = EnumerableSpace::from_table(Domain::Categorical { dim: 2, arity: 3 }, vec![1.0; 9]).unwrap();
        let next = exact_em_update(&cat, &space).unwrap();
        assert!(rel_err(&next.values, &cat.params().values) < 1e-12);
    }
}

#[test]
fn negative_objective_is_rejected() {
    let err = EnumerableSpace::from_table(BITS3, vec![1.0, -0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap_err();
    assert!(err.to_string().contains("nonnegative"), "{err}");
}

#[test]
fn all_zero_objective_is_degenerate() {
    let space = EnumerableSpace::from_table(BITS3, vec![0.0; 8]).unwrap();
    assert!(exact_objective(&bern(&[0.5; 3]), &space).is_err());
    assert!(exact_tilted(&bern(&[0.5; 3]), &space).is_err());
}
