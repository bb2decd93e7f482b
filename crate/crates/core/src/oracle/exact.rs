use serde::{Deserialize, Serialize};

use super::space::EnumerableSpace;
use crate::engine::{check_compatible, Population};
use crate::error::{EdaError, Result};
use crate::model::{ExpectationParams, SearchModel};

/// The tilted density `p(z|θ) f(z) / Σ p f` over an enumerated space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltedDistribution {
    pub probs: Vec<f64>,
}

/// `F(q, θ)`. `infinite` is set (and `value` is `-∞`) when `q` puts mass
/// where `p f = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreeEnergy {
    pub value: f64,
    pub infinite: bool,
}

/// `log p(z|θ) + log f(z)` per state; `-∞` where `f = 0`.
fn log_joint(model: &SearchModel, space: &EnumerableSpace) -> Result<Vec<f64>> {
    check_compatible(model, space.domain())?;
    space
        .states()
        .iter()
        .zip(space.values())
        .map(|(z, &f)| {
            Ok(if f > 0.0 {
                model.log_density(z)? + f.ln()
            } else {
                f64::NEG_INFINITY
            })
        })
        .collect()
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn normalizer(terms: &[f64]) -> Result<f64> {
    let z = log_sum_exp(terms);
    if z == f64::NEG_INFINITY {
        return Err(EdaError::DegenerateObjective(
            "E_p[f] = 0: f vanishes on the support of p".into(),
        ));
    }
    Ok(z)
}

/// `L(θ) = log Σ_z p(z|θ) f(z)`.
pub fn exact_objective(model: &SearchModel, space: &EnumerableSpace) -> Result<f64> {
    normalizer(&log_joint(model, space)?)
}

pub fn exact_tilted(model: &SearchModel, space: &EnumerableSpace) -> Result<TiltedDistribution> {
    let terms = log_joint(model, space)?;
    let z = normalizer(&terms)?;
    Ok(TiltedDistribution {
        probs: terms.iter().map(|t| (t - z).exp()).collect(),
    })
}

/// `E_tilted[T(z)]`, repaired into the family's valid set.
pub fn exact_em_update(model: &SearchModel, space: &EnumerableSpace) -> Result<ExpectationParams> {
    let tilted = exact_tilted(model, space)?;
    let mut acc = vec![0.0; model.family().param_len()];
    for (z, &q) in space.states().iter().zip(&tilted.probs) {
        if q > 0.0 {
            for (a, t) in acc.iter_mut().zip(model.sufficient_stats(z)?) {
                *a += q * t;
            }
        }
    }
    model.repair(&ExpectationParams::new(model.family(), acc)?)
}

/// The whole space as one weighted population with weights `p(z|θ) f(z)`;
/// a closed-form M-step on it reproduces [`exact_em_update`].
pub fn exact_population(model: &SearchModel, space: &EnumerableSpace) -> Result<Population> {
    let terms = log_joint(model, space)?;
    normalizer(&terms)?;
    Population::new(
        space.states().to_vec(),
        space.values().to_vec(),
        terms.iter().map(|t| t.exp()).collect(),
    )
}

fn check_distribution(q: &[f64], len: usize) -> Result<()> {
    if q.len() != len {
        return Err(EdaError::Input(format!("distribution has {} entries, space has {len}", q.len())));
    }
    if q.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(EdaError::Input("distribution entries must be finite and >= 0".into()));
    }
    let total: f64 = q.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(EdaError::Input(format!("distribution sums to {total}, not 1")));
    }
    Ok(())
}

/// `Σ q log(p f) − Σ q log q` with `0 log 0 = 0`.
pub fn exact_free_energy(q: &[f64], model: &SearchModel, space: &EnumerableSpace) -> Result<FreeEnergy> {
    check_distribution(q, space.len())?;
    let terms = log_joint(model, space)?;
    let mut value = 0.0;
    for (&qi, &t) in q.iter().zip(&terms) {
        if qi == 0.0 {
            continue;
        }
        if t == f64::NEG_INFINITY {
            return Ok(FreeEnergy {
                value: f64::NEG_INFINITY,
                infinite: true,
            });
        }
        value += qi * (t - qi.ln());
    }
    Ok(FreeEnergy {
        value,
        infinite: false,
    })
}

/// `KL(q‖r) = Σ q log(q/r)`; `+∞` when `q` is not absolutely continuous
/// with respect to `r`.
pub fn kl_divergence(q: &[f64], r: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in q.iter().zip(r) {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return f64::INFINITY;
        }
        total += a * (a / b).ln();
    }
    total
}

/// Exact `∇_θ L(θ) = E_tilted[∇_θ log p(z|θ)]`.
pub fn exact_objective_gradient(model: &SearchModel, space: &EnumerableSpace) -> Result<Vec<f64>> {
    let tilted = exact_tilted(model, space)?;
    let mut grad = vec![0.0; model.family().param_len()];
    for (z, &q) in space.states().iter().zip(&tilted.probs) {
        if q > 0.0 {
            for (g, s) in grad.iter_mut().zip(model.grad_log_density(z)?) {
                *g += q * s;
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::m_step_closed_form;
    use crate::model::{BernoulliProductModel, ModelOptions};
    use crate::objectives::{Domain, Objective};

    fn bern(p: &[f64]) -> SearchModel {
        SearchModel::Bernoulli(BernoulliProductModel::new(p.to_vec(), ModelOptions::default()).unwrap())
    }

    fn one_bit() -> EnumerableSpace {
        EnumerableSpace::from_table(Domain::Binary { dim: 1 }, vec![1.0, 3.0]).unwrap()
    }

    #[test]
    fn objective_examples() {
        assert!((exact_objective(&bern(&[0.5]), &one_bit()).unwrap() - 2f64.ln()).abs() < 1e-15);
        let c = EnumerableSpace::new(Objective::constant(Domain::Binary { dim: 2 }, 3.0)).unwrap();
        assert!((exact_objective(&bern(&[0.2, 0.7]), &c).unwrap() - 3f64.ln()).abs() < 1e-14);
        let om = EnumerableSpace::new(Objective::onemax(3).with_offset(1.0)).unwrap();
        assert!((exact_objective(&bern(&[0.5; 3]), &om).unwrap() - 2.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn zero_objective_is_degenerate() {
        let s = EnumerableSpace::from_table(Domain::Binary { dim: 1 }, vec![0.0, 0.0]).unwrap();
        assert!(matches!(exact_objective(&bern(&[0.5]), &s), Err(EdaError::DegenerateObjective(_))));
    }

    #[test]
    fn tilted_examples() {
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15);
        assert!(close(&exact_tilted(&bern(&[0.5]), &one_bit()).unwrap().probs, &[0.25, 0.75]));
        let s = EnumerableSpace::from_table(Domain::Binary { dim: 2 }, vec![0.0, 1.0, 1.0, 2.0]).unwrap();
        let t = exact_tilted(&bern(&[0.5, 0.5]), &s).unwrap().probs;
        assert_eq!(t[0], 0.0);
        assert!(close(&t, &[0.0, 0.25, 0.25, 0.5]));
        let c = EnumerableSpace::new(Objective::constant(Domain::Binary { dim: 2 }, 4.0)).unwrap();
        let t = exact_tilted(&bern(&[0.2, 0.7]), &c).unwrap().probs;
        for (a, b) in t.iter().zip([0.8 * 0.3, 0.8 * 0.7, 0.2 * 0.3, 0.2 * 0.7]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn em_update_examples() {
        assert!((exact_em_update(&bern(&[0.5]), &one_bit()).unwrap().values[0] - 0.75).abs() < 1e-15);
        let om = EnumerableSpace::new(Objective::onemax(2).with_offset(1.0)).unwrap();
        let p = exact_em_update(&bern(&[0.5, 0.5]), &om).unwrap().values;
        assert!((p[0] - 0.625).abs() < 1e-15 && (p[1] - 0.625).abs() < 1e-15);
        let c = EnumerableSpace::new(Objective::constant(Domain::Binary { dim: 2 }, 4.0)).unwrap();
        let p = exact_em_update(&bern(&[0.2, 0.7]), &c).unwrap().values;
        assert!((p[0] - 0.2).abs() < 1e-15 && (p[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn free_energy_examples() {
        let m = bern(&[0.5]);
        let s = one_bit();
        let sat = exact_free_energy(&[0.25, 0.75], &m, &s).unwrap();
        assert!((sat.value - 2f64.ln()).abs() < 1e-15);
        let jensen = exact_free_energy(&[0.5, 0.5], &m, &s).unwrap();
        assert!((jensen.value - 0.5 * 3f64.ln()).abs() < 1e-15);
        assert!(jensen.value < 2f64.ln());
    }

    #[test]
    fn free_energy_flags_mass_off_support() {
        let s = EnumerableSpace::from_table(Domain::Binary { dim: 1 }, vec![0.0, 3.0]).unwrap();
        let fe = exact_free_energy(&[0.5, 0.5], &bern(&[0.5]), &s).unwrap();
        assert!(fe.infinite && fe.value == f64::NEG_INFINITY);
        assert!(exact_free_energy(&[0.5, 0.6], &bern(&[0.5]), &s).is_err());
    }

    #[test]
    fn exact_population_gives_exact_update() {
        let om = EnumerableSpace::new(Objective::onemax(3).with_offset(1.0)).unwrap();
        let m = bern(&[0.3, 0.5, 0.8]);
        let pop = exact_population(&m, &om).unwrap();
        let a = m_step_closed_form(&pop, &m).unwrap();
        let b = exact_em_update(&m, &om).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_one_bit_hand_value() {
        // L(p) = log(1 + 2p): dL/dp = 2 / (1 + 2p) = 1 at p = 0.5.
        let g = exact_objective_gradient(&bern(&[0.5]), &one_bit()).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kl_properties() {
        assert_eq!(kl_divergence(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        assert_eq!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]), f64::INFINITY);
        assert_eq!(kl_divergence(&[1.0, 0.0], &[0.5, 0.5]), 2f64.ln());
    }
}
