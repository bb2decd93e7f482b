use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::exact::{
    exact_em_update, exact_free_energy, exact_objective, exact_objective_gradient, exact_tilted,
    kl_divergence,
};
use super::space::EnumerableSpace;
use crate::engine::{e_step, m_step_closed_form};
use crate::error::{EdaError, Result};
use crate::model::{ExpectationParams, Family, SearchModel};
use crate::shaping::ShapingSpec;

/// Outcome of one oracle check on one fixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub check_name: String,
    pub fixture: String,
    pub values: serde_json::Value,
    pub pass: bool,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn require_bernoulli(model: &SearchModel, max_dim: usize) -> Result<usize> {
    match model.family() {
        Family::Bernoulli { dim } if dim <= max_dim => Ok(dim),
        other => Err(EdaError::Input(format!(
            "this check needs a bernoulli model with dim <= {max_dim}, got {}",
            other.describe()
        ))),
    }
}

/// Bound suite: `F(tilted) = L`, and for `n_random` random `q` on the
/// support of the tilted density, `F(q) <= L` and `F(q) − L = −KL(q‖tilted)`.
pub fn verify_free_energy_bound(
    model: &SearchModel,
    space: &EnumerableSpace,
    fixture: &str,
    n_random: usize,
    seed: u64,
    tol: f64,
) -> Result<Report> {
    let l = exact_objective(model, space)?;
    let tilted = exact_tilted(model, space)?;
    let at_tilted = exact_free_energy(&tilted.probs, model, space)?;
    let satiation_err = (at_tilted.value - l).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let support: Vec<usize> = (0..space.len()).filter(|&i| tilted.probs[i] > 0.0).collect();
    let (mut max_excess, mut max_gap_err) = (f64::NEG_INFINITY, 0.0f64);
    for _ in 0..n_random {
        let mut q = vec![0.0; space.len()];
        // Random sparsity: each supported state is dropped with probability 1/4.
        for &i in &support {
            if rng.random::<f64>() >= 0.25 {
                q[i] = Exp1.sample(&mut rng);
            }
        }
        if q.iter().all(|&v| v == 0.0) {
            q[support[rng.random_range(0..support.len())]] = 1.0;
        }
        let total: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= total);
        let fe = exact_free_energy(&q, model, space)?;
        let kl = kl_divergence(&q, &tilted.probs);
        max_excess = max_excess.max(fe.value - l);
        max_gap_err = max_gap_err.max((fe.value - l + kl).abs());
    }
    let pass = satiation_err <= tol && max_excess <= tol && max_gap_err <= tol;
    Ok(Report {
        check_name: "free_energy_bound".into(),
        fixture: fixture.into(),
        values: json!({
            "objective": l,
            "free_energy_at_tilted": at_tilted.value,
            "satiation_error": satiation_err,
            "max_free_energy_minus_objective": max_excess,
            "max_gap_identity_error": max_gap_err,
            "random_q": n_random,
            "tolerance": tol,
        }),
        pass,
    })
}

/// Iterates the exact EM update `steps` times and checks that `L` never
/// drops by more than `tol` in one step.
pub fn verify_em_monotonicity(
    model_init: &SearchModel,
    space: &EnumerableSpace,
    fixture: &str,
    steps: usize,
    tol: f64,
) -> Result<Report> {
    let mut model = model_init.clone();
    let mut objective = vec![exact_objective(&model, space)?];
    for _ in 0..steps {
        let theta = exact_em_update(&model, space)?;
        model = model.with_params(&theta)?;
        objective.push(exact_objective(&model, space)?);
    }
    let worst_step = objective
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    Ok(Report {
        check_name: "em_monotonicity".into(),
        fixture: fixture.into(),
        values: json!({
            "objective": objective,
            "worst_step": worst_step,
            "final_theta": model.params().values,
            "tolerance": tol,
        }),
        pass: steps == 0 || worst_step >= -tol,
    })
}

/// Largest grid the search evaluates in one pass.
const FULL_GRID_LIMIT: usize = 2_000_000;

/// Grid-maximizes `θ ↦ L(θ) − KL(tilted(θ_t) ‖ tilted(θ))` over multiples of
/// `grid_step` in `[ε, 1−ε]^d` and compares the argmax with the exact EM
/// update.
///
/// Grids above [`FULL_GRID_LIMIT`] points are searched coarse to fine
/// (stride ×10 per level, window of ±2 coarse strides), which is exact for
/// this objective because it is concave in `θ`.
pub fn verify_ppm_equivalence(
    model: &SearchModel,
    space: &EnumerableSpace,
    fixture: &str,
    grid_step: f64,
) -> Result<Report> {
    let dim = require_bernoulli(model, 3)?;
    if !(grid_step > 0.0 && grid_step < 0.5) {
        return Err(EdaError::config("grid_step", format!("must lie in (0, 0.5), got {grid_step}")));
    }
    let eps = model.options().prob_floor;
    let lo = (eps / grid_step - 1e-9).ceil() as i64;
    let hi = ((1.0 - eps) / grid_step + 1e-9).floor() as i64;
    if lo > hi {
        return Err(EdaError::config("grid_step", "grid has no points inside the floors"));
    }
    let anchor = exact_tilted(model, space)?;
    let exact = exact_em_update(model, space)?;

    let eval = |idx: &[i64]| -> Option<f64> {
        let values = idx.iter().map(|&i| i as f64 * grid_step).collect();
        let theta = ExpectationParams::new(model.family(), values).ok()?;
        let cand = model.with_params_exact(&theta).ok()?;
        let l = exact_objective(&cand, space).ok()?;
        let tilted = exact_tilted(&cand, space).ok()?;
        let v = l - kl_divergence(&anchor.probs, &tilted.probs);
        v.is_finite().then_some(v)
    };

    let span = (hi - lo + 1) as usize;
    let mut stride = 1i64;
    while (span / stride as usize + 1).pow(dim as u32) > FULL_GRID_LIMIT {
        stride *= 10;
    }
    let mut windows = vec![(lo, hi); dim];
    let mut evaluated = 0usize;
    let mut excluded = 0usize;
    let mut best: Vec<i64>;
    loop {
        let axes: Vec<Vec<i64>> = windows
            .iter()
            .map(|&(a, b)| {
                let mut axis: Vec<i64> = (a..=b).step_by(stride as usize).collect();
                if *axis.last().unwrap() != b {
                    axis.push(b);
                }
                axis
            })
            .collect();
        let total: usize = axes.iter().map(Vec::len).product();
        let (found, bad) = (0..total)
            .into_par_iter()
            .map(|flat| {
                let mut rest = flat;
                let mut idx = vec![0i64; dim];
                for (k, axis) in axes.iter().enumerate().rev() {
                    idx[k] = axis[rest % axis.len()];
                    rest /= axis.len();
                }
                match eval(&idx) {
                    Some(v) => (Some((v, flat)), 0usize),
                    None => (None, 1usize),
                }
            })
            .reduce(
                || (None, 0),
                |(a, na), (b, nb)| {
                    let pick = match (a, b) {
                        (Some(x), Some(y)) => Some(if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) { y } else { x }),
                        (x, None) => x,
                        (None, y) => y,
                    };
                    (pick, na + nb)
                },
            );
        evaluated += total;
        excluded += bad;
        let Some((_, flat)) = found else {
            return Err(EdaError::DegenerateObjective("every grid point was excluded".into()));
        };
        let mut rest = flat;
        best = vec![0; dim];
        for (k, axis) in axes.iter().enumerate().rev() {
            best[k] = axis[rest % axis.len()];
            rest /= axis.len();
        }
        if stride == 1 {
            break;
        }
        windows = best
            .iter()
            .map(|&b| ((b - 2 * stride).max(lo), (b + 2 * stride).min(hi)))
            .collect();
        stride /= 10;
    }

    let argmax: Vec<f64> = best.iter().map(|&i| i as f64 * grid_step).collect();
    let max_coord_diff = argmax
        .iter()
        .zip(&exact.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(Report {
        check_name: "ppm_equivalence".into(),
        fixture: fixture.into(),
        values: json!({
            "argmax": argmax,
            "exact_update": exact.values,
            "grid_step": grid_step,
            "max_coordinate_difference": max_coord_diff,
            "evaluated_points": evaluated,
            "excluded_points": excluded,
        }),
        pass: max_coord_diff <= grid_step * (1.0 + 1e-9),
    })
}

/// Discrepancies at or below this are treated as rounding noise.
pub const NGD_DISCREPANCY_FLOOR: f64 = 1e-12;

/// One NGD step with exact gradient and Fisher information.
pub fn exact_ngd_step(model: &SearchModel, space: &EnumerableSpace) -> Result<(Vec<f64>, Vec<f64>)> {
    let grad = exact_objective_gradient(model, space)?;
    let fisher = model.fisher_information()?;
    let chol = fisher
        .clone()
        .cholesky()
        .ok_or_else(|| EdaError::DegenerateModel("Fisher information is not positive definite".into()))?;
    let step = chol.solve(&DVector::from_column_slice(&grad));
    let theta: Vec<f64> = model
        .params()
        .values
        .iter()
        .zip(step.iter())
        .map(|(t, s)| t + s)
        .collect();
    Ok((theta, grad))
}

/// Compares `θ + I⁻¹∇L` with the exact EM update on the objectives
/// `1 + s (f − 1)`, `s ∈ scales`, and checks that
/// `‖θ_NGD − θ_EM‖ / ‖∇L‖²` at most doubles from one scale to the next.
pub fn verify_ngd_correspondence(
    model: &SearchModel,
    space: &EnumerableSpace,
    fixture: &str,
    scales: &[f64],
) -> Result<Report> {
    require_bernoulli(model, usize::MAX)?;
    if model.on_boundary() {
        return Err(EdaError::Boundary("NGD correspondence needs an interior θ".into()));
    }
    if space.values().iter().any(|&f| f <= 0.0) {
        return Err(EdaError::Input("NGD correspondence needs f > 0 everywhere".into()));
    }
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for &s in scales {
        let scaled = space.rescaled(s)?;
        let (ngd, grad) = exact_ngd_step(model, &scaled)?;
        let em = exact_em_update(model, &scaled)?;
        let discrepancy = distance(&ngd, &em.values);
        let grad_sq: f64 = grad.iter().map(|g| g * g).sum();
        let effective = if discrepancy <= NGD_DISCREPANCY_FLOOR { 0.0 } else { discrepancy };
        let ratio = if grad_sq > 0.0 { effective / grad_sq } else { 0.0 };
        ratios.push(ratio);
        rows.push(json!({
            "scale": s,
            "theta_ngd": ngd,
            "theta_em": em.values,
            "discrepancy": discrepancy,
            "grad_norm_sq": grad_sq,
            "ratio": ratio,
        }));
    }
    let bounded = ratios.windows(2).all(|w| w[1] <= 2.0 * w[0]);
    Ok(Report {
        check_name: "ngd_correspondence".into(),
        fixture: fixture.into(),
        values: json!({ "scales": rows, "ratios": ratios, "floor": NGD_DISCREPANCY_FLOOR }),
        pass: bounded,
    })
}

/// Delta-method RMS error of the self-normalized Monte-Carlo M-step with
/// `n` samples: `sqrt(Σ_j E_p[f² (T_j − θ'_j)²] / (n E_p[f]²))`.
pub fn mc_error_scale(model: &SearchModel, space: &EnumerableSpace, n: usize) -> Result<f64> {
    let exact = exact_em_update(model, space)?;
    let (mut mean_f, mut var) = (0.0, 0.0);
    for (z, &f) in space.states().iter().zip(space.values()) {
        let p = model.log_density(z)?.exp();
        mean_f += p * f;
        let t = model.sufficient_stats(z)?;
        var += p * f * f * t.iter().zip(&exact.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok((var / (n as f64 * mean_f * mean_f)).sqrt())
}

fn mc_seed(seed: u64, n: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ n as u64
}

/// Mean `‖θ̃_N − θ_EM‖` over `seeds` for each `N` (identity shaping,
/// closed-form M-step).
pub fn mc_errors(model: &SearchModel, space: &EnumerableSpace, n_list: &[usize], seeds: &[u64]) -> Result<Vec<f64>> {
    let exact = exact_em_update(model, space)?;
    n_list
        .iter()
        .map(|&n| {
            let mut total = 0.0;
            for &seed in seeds {
                let pop = e_step(model, space.objective(), &ShapingSpec::Identity, n, mc_seed(seed, n))?;
                total += distance(&m_step_closed_form(&pop, model)?.values, &exact.values);
            }
            Ok(total / seeds.len() as f64)
        })
        .collect()
}

/// Multiple of [`mc_error_scale`] used as the default bound at the largest N.
pub const MC_BOUND_FACTOR: f64 = 3.0;

/// Checks that the mean Monte-Carlo update error shrinks with `N` (at most
/// one inversion) and that the error at the largest `N` is below `bound`
/// (default: [`MC_BOUND_FACTOR`] × the delta-method scale).
pub fn verify_mc_convergence(
    model: &SearchModel,
    space: &EnumerableSpace,
    fixture: &str,
    n_list: &[usize],
    seeds: &[u64],
    bound: Option<f64>,
) -> Result<Report> {
    if n_list.is_empty() || seeds.is_empty() {
        return Err(EdaError::Input("n_list and seeds must be non-empty".into()));
    }
    let errors = mc_errors(model, space, n_list, seeds)?;
    let n_max = *n_list.iter().max().unwrap();
    let bound = match bound {
        Some(b) => b,
        None => MC_BOUND_FACTOR * mc_error_scale(model, space, n_max)?,
    };
    let inversions = errors.windows(2).filter(|w| w[1] > w[0]).count();
    let last = errors[n_list.iter().position(|&n| n == n_max).unwrap()];
    Ok(Report {
        check_name: "mc_convergence".into(),
        fixture: fixture.into(),
        values: json!({
            "n": n_list,
            "mean_error": errors,
            "inversions": inversions,
            "bound": bound,
            "seeds": seeds.len(),
        }),
        pass: inversions <= 1 && last < bound,
    })
}

/// Dense Fisher information by enumeration: `E_p[∇log p ∇log pᵀ]`.
pub fn enumerated_fisher(model: &SearchModel, space: &EnumerableSpace) -> Result<DMatrix<f64>> {
    let n = model.family().param_len();
    let mut acc = DMatrix::zeros(n, n);
    for z in space.states() {
        let p = model.log_density(z)?.exp();
        let g = DVector::from_vec(model.grad_log_density(z)?);
        acc += p * &g * g.transpose();
    }
    Ok(acc)
}
