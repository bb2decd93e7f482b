mod common;

use edaem::model::{
    CategoricalProductModel, ExpectationParams, GaussianModel, ModelOptions, Point, SearchModel,
};
use edaem::objectives::{Domain, Objective};
use edaem::oracle::{enumerated_fisher, EnumerableSpace};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::*;

fn space_for(model: &SearchModel) -> EnumerableSpace {
    let domain = match model.family() {
        edaem::Family::Bernoulli { dim } => Domain::Binary { dim },
        edaem::Family::Categorical { dim, arity } => Domain::Categorical { dim, arity },
        _ => unreachable!(),
    };
    EnumerableSpace::new(Objective::constant(domain, 1.0)).unwrap()
}

#[test]
fn discrete_densities_sum_to_one() {
    let mut r = rng(1);
    for dim in [1, 4, 10] {
        let m = random_bernoulli(&mut r, dim);
        let total: f64 = space_for(&m).states().iter().map(|z| m.log_density(z).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-10, "bernoulli d={dim}: {total}");
    }
    for (dim, arity) in [(1, 3), (3, 4), (5, 4)] {
        let m = random_categorical(&mut r, dim, arity);
        let total: f64 = space_for(&m).states().iter().map(|z| m.log_density(z).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-10, "categorical {dim}x{arity}: {total}");
    }
}

#[test]
fn fisher_equals_enumerated_score_outer_product() {
    let mut r = rng(2);
    for dim in [1, 3, 10] {
        let m = random_bernoulli(&mut r, dim);
        let diff = (enumerated_fisher(&m, &space_for(&m)).unwrap() - m.fisher_information().unwrap()).abs().max();
        assert!(diff < 1e-8, "bernoulli d={dim}: {diff}");
    }
    for (dim, arity) in [(1, 2), (2, 3), (3, 4), (5, 4)] {
        let m = random_categorical(&mut r, dim, arity);
        let diff = (enumerated_fisher(&m, &space_for(&m)).unwrap() - m.fisher_information().unwrap()).abs().max();
        assert!(diff < 1e-8, "categorical {dim}x{arity}: {diff}");
    }
}

#[test]
fn bernoulli_fisher_matches_monte_carlo() {
    let m = bern(&[0.3]);
    let n = 1_000_000;
    let mean_sq: f64 = m
        .sample(n, 11)
        .unwrap()
        .iter()
        .map(|z| m.grad_log_density(z).unwrap()[0].powi(2))
        .sum::<f64>()
        / n as f64;
    let exact = m.fisher_information().unwrap()[(0, 0)];
    assert!((mean_sq / exact - 1.0).abs() < 0.02, "{mean_sq} vs {exact}");
}

#[test]
fn gaussian_fisher_matches_monte_carlo() {
    let mut r = rng(3);
    let m = random_gaussian(&mut r, 2);
    let n = 400_000;
    let k = m.family().param_len();
    let mut acc = DMatrix::zeros(k, k);
    for z in m.sample(n, 5).unwrap() {
        let g = DVector::from_vec(m.grad_log_density(&z).unwrap());
        acc += &g * g.transpose();
    }
    acc /= n as f64;
    let exact = m.fisher_information().unwrap();
    let rel = (&acc - &exact).abs().max() / exact.abs().max();
    assert!(rel < 0.05, "relative deviation {rel}\n{acc}\n{exact}");
}

#[test]
fn gaussian_fisher_inverse_is_stat_covariance() {
    let mut r = rng(4);
    for d in [1, 2, 3] {
        let SearchModel::Gaussian(g) = random_gaussian(&mut r, d) else { unreachable!() };
        let f = SearchModel::Gaussian(g.clone()).fisher_information().unwrap();
        let prod = f * g.sufficient_stat_covariance();
        let err = (prod - DMatrix::identity(g.sufficient_stat_covariance().nrows(), g.sufficient_stat_covariance().nrows())).abs().max();
        assert!(err < 1e-8, "d={d}: {err}");
    }
}

#[test]
fn gaussian_sample_mean_within_three_sigma() {
    let m = SearchModel::Gaussian(GaussianModel::isotropic(vec![0.0, 0.0], 1.0, ModelOptions::default()).unwrap());
    let n = 100_000;
    let mut mean = [0.0; 2];
    for z in m.sample(n, 9).unwrap() {
        let Point::Real(x) = z else { unreachable!() };
        mean[0] += x[0] / n as f64;
        mean[1] += x[1] / n as f64;
    }
    let tol = 3.0 * (1.0 / n as f64).sqrt();
    assert!(mean.iter().all(|v| v.abs() < tol), "{mean:?}");
}

#[test]
fn uniform_weight_mle_recovers_parameters() {
    let mut r = rng(5);
    let models = [random_bernoulli(&mut r, 3), random_categorical(&mut r, 2, 3), random_gaussian(&mut r, 2)];
    for m in models {
        let n = 200_000;
        let pop = edaem::Population::from_weights(m.sample(n, 21).unwrap(), vec![1.0; n]).unwrap();
        let theta = edaem::engine::m_step_closed_form(&pop, &m).unwrap();
        let err = rel_err(&theta.values, &m.params().values);
        assert!(err < 0.02, "{}: {err}", m.family().describe());
    }
}

#[test]
fn sampling_is_reproducible_per_seed() {
    let mut r = rng(6);
    for m in [random_bernoulli(&mut r, 5), random_categorical(&mut r, 3, 4), random_gaussian(&mut r, 3)] {
        assert_eq!(m.sample(50, 3).unwrap(), m.sample(50, 3).unwrap());
        assert_ne!(m.sample(50, 3).unwrap(), m.sample(50, 4).unwrap());
    }
}

/// Central difference of `log_density` along each coordinate of `θ`.
fn fd_gradient(m: &SearchModel, z: &Point) -> Vec<f64> {
    let theta = m.params().values;
    (0..theta.len())
        .map(|i| {
            let h = 1e-6 * theta[i].abs().max(1.0);
            let shifted = |d: f64| {
                let mut v = theta.clone();
                v[i] += d;
                let t = ExpectationParams::new(m.family(), v).unwrap();
                m.with_params_exact(&t).unwrap().log_density(z).unwrap()
            };
            (shifted(h) - shifted(-h)) / (2.0 * h)
        })
        .collect()
}

fn assert_fd_agrees(m: &SearchModel, z: &Point) {
    let g = m.grad_log_density(z).unwrap();
    let fd = fd_gradient(m, z);
    let scale = g.iter().map(|v| v.abs()).fold(1.0, f64::max);
    for (a, b) in g.iter().zip(&fd) {
        assert!((a - b).abs() <= 1e-5 * scale, "{g:?} vs {fd:?} for {}", m.family().describe());
    }
}

#[test]
fn fixed_covariance_gradient_matches_finite_differences() {
    for (mean, z) in [(0.0, 1.5), (2.0, -1.0), (-0.7, -0.7)] {
        let m = SearchModel::Gaussian(
            GaussianModel::fixed_covariance(vec![mean], DMatrix::from_element(1, 1, 0.6), ModelOptions::default())
                .unwrap(),
        );
        assert_fd_agrees(&m, &Point::Real(vec![z]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradients_match_finite_differences(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let models = [
            random_bernoulli(&mut r, 1 + (seed % 4) as usize),
            random_categorical(&mut r, 1 + (seed % 2) as usize, 2 + (seed % 3) as usize),
            random_gaussian(&mut r, 1 + (seed % 3) as usize),
        ];
        for m in &models {
            for z in m.sample(3, seed).unwrap() {
                assert_fd_agrees(m, &z);
            }
        }
    }

    #[test]
    fn log_density_has_exponential_family_form(seed in 0u64..10_000) {
        // log p(z) − ηᵀT(z) + A must not depend on z for the discrete
        // families (h(z) = 1).
        let mut r = rng(seed);
        for m in [random_bernoulli(&mut r, 3), random_categorical(&mut r, 2, 3)] {
            let eta = m.natural_params();
            let a = m.log_partition();
            for z in m.sample(5, seed).unwrap() {
                let t = m.sufficient_stats(&z).unwrap();
                let dot: f64 = eta.iter().zip(&t).map(|(e, t)| e * t).sum();
                prop_assert!((m.log_density(&z).unwrap() - dot + a).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn state_round_trips_through_json(seed in 0u64..10_000) {
        let mut r = rng(seed);
        for m in [random_bernoulli(&mut r, 2), random_categorical(&mut r, 2, 3), random_gaussian(&mut r, 2)] {
            let text = serde_json::to_string(&m.to_state()).unwrap();
            let back = SearchModel::from_state(&serde_json::from_str(&text).unwrap(), ModelOptions::default()).unwrap();
            prop_assert_eq!(back.params(), m.params());
        }
    }

    #[test]
    fn projection_lands_in_valid_set(values in prop::collection::vec(-0.5f64..1.5, 6)) {
        let eps = ModelOptions::default().prob_floor;
        let b = bern(&[0.5; 6]);
        let theta = ExpectationParams::new(b.family(), values.clone()).unwrap();
        let repaired = b.with_params(&theta).unwrap().params().values;
        prop_assert!(repaired.iter().all(|&p| p >= eps && p <= 1.0 - eps));

        let c = SearchModel::Categorical(CategoricalProductModel::uniform(3, 3, ModelOptions::default()).unwrap());
        let theta = ExpectationParams::new(c.family(), values).unwrap();
        let SearchModel::Categorical(cat) = c.with_params(&theta).unwrap() else { unreachable!() };
        for row in cat.probs() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= eps - 1e-15));
        }
    }
}
