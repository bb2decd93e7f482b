//! The EDA main loop read as Monte-Carlo EM.
//!
//! Each iteration samples `N` points from the current search model, shapes
//! their objective values into weights (the particle posterior), and runs one
//! of three M-steps:
//!
//! * closed form: weighted mean of sufficient statistics;
//! * MAP-smoothed: convex combination of the previous and the closed-form
//!   parameters, i.e. the MAP update under a conjugate prior centred on the
//!   previous iterate;
//! * gradient: `k` ascent steps on the weighted log-likelihood. `k = 1` is the
//!   score-function (REINFORCE) update; large `k` approaches the closed form.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EdaError, Result};
use crate::model::{ExpectationParams, Family, ModelState, Point, SearchModel};
use crate::objectives::{Domain, Objective};
use crate::shaping::{shape, ShapingSpec};

/// One generation: samples, their raw values, shaped weights and the
/// normalized particle posterior `q̂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub samples: Vec<Point>,
    pub raw_f: Vec<f64>,
    pub shaped_w: Vec<f64>,
    pub norm_w: Vec<f64>,
}

impl Population {
    pub fn new(samples: Vec<Point>, raw_f: Vec<f64>, shaped_w: Vec<f64>) -> Result<Self> {
        let n = samples.len();
        if raw_f.len() != n || shaped_w.len() != n {
            return Err(EdaError::Input(format!(
                "population arrays disagree: {n} samples, {} values, {} weights",
                raw_f.len(),
                shaped_w.len()
            )));
        }
        if let Some((i, w)) = shaped_w.iter().enumerate().find(|(_, w)| !(**w >= 0.0) || !w.is_finite()) {
            return Err(EdaError::Input(format!("weight {w} at sample {i} is not a finite nonnegative number")));
        }
        let total: f64 = shaped_w.iter().sum();
        if !(total > 0.0) {
            return Err(EdaError::DegenerateWeights(format!("all {n} weights are zero")));
        }
        let norm_w = shaped_w.iter().map(|w| w / total).collect();
        Ok(Self {
            samples,
            raw_f,
            shaped_w,
            norm_w,
        })
    }

    /// Weights given directly (no raw objective values).
    pub fn from_weights(samples: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        let raw = weights.clone();
        Self::new(samples, raw, weights)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Effective sample size `1 / Σ q̂_i²`.
    pub fn ess(&self) -> f64 {
        1.0 / self.norm_w.iter().map(|w| w * w).sum::<f64>()
    }

    /// Entropy of the particle weights, `-Σ q̂ log q̂` (with `0 log 0 = 0`).
    pub fn weight_entropy(&self) -> f64 {
        -self
            .norm_w
            .iter()
            .filter(|&&q| q > 0.0)
            .map(|&q| q * q.ln())
            .sum::<f64>()
    }

    pub fn total_weight(&self) -> f64 {
        self.shaped_w.iter().sum()
    }
}

/// Which M-step variant runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UpdateRule {
    ClosedForm,
    MapSmoothed { gamma: f64 },
    Gradient { alpha: f64, k: usize },
}

impl UpdateRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            UpdateRule::ClosedForm => Ok(()),
            UpdateRule::MapSmoothed { gamma } if !(gamma > 0.0 && gamma <= 1.0) => Err(
                EdaError::config("update.gamma", format!("must lie in (0, 1], got {gamma}")),
            ),
            UpdateRule::Gradient { alpha, .. } if !(alpha > 0.0 && alpha.is_finite()) => Err(
                EdaError::config("update.alpha", format!("must be a positive real, got {alpha}")),
            ),
            UpdateRule::Gradient { k: 0, .. } => {
                Err(EdaError::config("update.k", "must be a positive integer, got 0"))
            }
            _ => Ok(()),
        }
    }
}

/// Conjugate prior `p₀(θ|λ) ∝ exp(λ₁ᵀη(θ) − λ₂A(θ))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConjugatePrior {
    pub lambda1: Vec<f64>,
    pub lambda2: f64,
}

impl ConjugatePrior {
    /// The prior whose MAP update is `(1-γ) θ_prev + γ θ̃`:
    /// `λ₂ = 1/γ − 1`, `λ₁ = λ₂ θ_prev`.
    pub fn smoothing(theta_prev: &ExpectationParams, gamma: f64) -> Self {
        let lambda2 = 1.0 / gamma - 1.0;
        Self {
            lambda1: theta_prev.values.iter().map(|t| lambda2 * t).collect(),
            lambda2,
        }
    }

    /// `log p₀(θ|λ)` up to the prior's own log-partition `B(λ)`, which does
    /// not depend on `θ`.
    pub fn log_density_unnormalized(&self, model: &SearchModel) -> f64 {
        let eta = model.natural_params();
        let linear: f64 = self.lambda1.iter().zip(&eta).map(|(l, e)| l * e).sum();
        linear - self.lambda2 * model.log_partition()
    }
}

/// Objective-domain / model-family agreement.
pub fn check_compatible(model: &SearchModel, domain: Domain) -> Result<()> {
    let ok = match (model.family(), domain) {
        (Family::Bernoulli { dim }, Domain::Binary { dim: d }) => dim == d,
        (Family::Categorical { dim, arity }, Domain::Categorical { dim: d, arity: k }) => {
            dim == d && arity == k
        }
        (Family::Gaussian { dim }, Domain::Real { dim: d })
        | (Family::GaussianFixedCov { dim }, Domain::Real { dim: d }) => dim == d,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(EdaError::Input(format!(
            "model {} cannot search domain {domain:?}",
            model.family().describe()
        )))
    }
}

/// Samples a generation and forms the particle posterior.
pub fn e_step(
    model: &SearchModel,
    objective: &Objective,
    shaping: &ShapingSpec,
    n: usize,
    seed: u64,
) -> Result<Population> {
    if n < 2 {
        return Err(EdaError::Input(format!("population size must be >= 2, got {n}")));
    }
    check_compatible(model, objective.domain())?;
    let samples = model.sample(n, seed)?;
    let mut raw_f = Vec::with_capacity(n);
    for (index, z) in samples.iter().enumerate() {
        let value = objective.evaluate(z)?;
        if !value.is_finite() {
            return Err(EdaError::Objective { index, value });
        }
        raw_f.push(value);
    }
    let shaped_w = shape(shaping, &raw_f)?;
    Population::new(samples, raw_f, shaped_w)
}

/// `Σ w_i T(z_i) / Σ w_i` followed by family repair.
pub fn m_step_closed_form(pop: &Population, model: &SearchModel) -> Result<ExpectationParams> {
    let theta = weighted_mean_stats(pop, model)?;
    model.repair(&theta).map_err(into_update_error)
}

/// The unrepaired weighted mean of sufficient statistics.
pub fn weighted_mean_stats(pop: &Population, model: &SearchModel) -> Result<ExpectationParams> {
    let total = pop.total_weight();
    if !(total > 0.0) {
        return Err(EdaError::DegenerateWeights("weights sum to zero".into()));
    }
    let mut acc = vec![0.0; model.family().param_len()];
    for (z, &w) in pop.samples.iter().zip(&pop.shaped_w) {
        if w == 0.0 {
            continue;
        }
        for (a, t) in acc.iter_mut().zip(model.sufficient_stats(z)?) {
            *a += w * t;
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    ExpectationParams::new(model.family(), acc)
}

/// `(1-γ) θ_prev + γ θ̃`, componentwise.
///
/// Both inputs are valid expectation parameters of the same family and every
/// family's valid set is convex, so the result needs no further repair.
pub fn m_step_map(
    theta_prev: &ExpectationParams,
    theta_tilde: &ExpectationParams,
    gamma: f64,
) -> Result<ExpectationParams> {
    UpdateRule::MapSmoothed { gamma }.validate()?;
    theta_prev.ensure_same_family(theta_tilde)?;
    let values = theta_prev
        .values
        .iter()
        .zip(&theta_tilde.values)
        .map(|(&prev, &tilde)| (1.0 - gamma) * prev + gamma * tilde)
        .collect();
    ExpectationParams::new(theta_prev.family, values)
}

/// Default cap on consecutive projections in [`m_step_gradient`].
pub const DEFAULT_MAX_PROJECTIONS: usize = 3;

/// `k` ascent steps on `Σ w_i log p(z_i|θ)` with step `α`, projecting back
/// onto the valid domain after each step.
pub fn m_step_gradient(
    pop: &Population,
    model: &SearchModel,
    alpha: f64,
    k: usize,
) -> Result<ExpectationParams> {
    m_step_gradient_with(pop, model, alpha, k, DEFAULT_MAX_PROJECTIONS)
}

pub fn m_step_gradient_with(
    pop: &Population,
    model: &SearchModel,
    alpha: f64,
    k: usize,
    max_projections: usize,
) -> Result<ExpectationParams> {
    UpdateRule::Gradient { alpha, k }.validate()?;
    let mut current = model.clone();
    let mut consecutive = 0usize;
    for step in 0..k {
        let mut theta = current.params();
        for (z, &w) in pop.samples.iter().zip(&pop.shaped_w) {
            if w == 0.0 {
                continue;
            }
            for (t, g) in theta.values.iter_mut().zip(current.score(z)?) {
                *t += alpha * w * g;
            }
        }
        current = match current.with_params_exact(&theta) {
            Ok(m) => {
                consecutive = 0;
                m
            }
            Err(EdaError::Domain(_)) => {
                consecutive += 1;
                if consecutive > max_projections {
                    return Err(EdaError::StepSize(format!(
                        "iterate left the valid domain {consecutive} times in a row \
                         (step {}, alpha = {alpha}); try a smaller alpha",
                        step + 1
                    )));
                }
                current.with_params(&theta).map_err(into_update_error)?
            }
            Err(e) => return Err(into_update_error(e)),
        };
    }
    Ok(current.params())
}

/// `Σ w_i log p(z_i|θ)` with the population's shaped weights.
pub fn weighted_log_likelihood(pop: &Population, model: &SearchModel) -> Result<f64> {
    let mut total = 0.0;
    for (z, &w) in pop.samples.iter().zip(&pop.shaped_w) {
        if w > 0.0 {
            total += w * model.log_density(z)?;
        }
    }
    Ok(total)
}

/// `Σ w_i log[p(z_i|θ) p₀(θ|λ)]`, the MAP M-step objective (without `B(λ)`).
pub fn map_objective(pop: &Population, model: &SearchModel, prior: &ConjugatePrior) -> Result<f64> {
    Ok(weighted_log_likelihood(pop, model)? + pop.total_weight() * prior.log_density_unnormalized(model))
}

/// Particle free energy `Σ q̂_i log(p(z_i|θ) w_i) + H[q̂]`.
///
/// `H[q̂]` is the discrete entropy of the particle weights; this is a
/// diagnostic surrogate, not a bound.
pub fn particle_free_energy(pop: &Population, model: &SearchModel) -> Result<f64> {
    let mut expected = 0.0;
    for ((z, &q), &w) in pop.samples.iter().zip(&pop.norm_w).zip(&pop.shaped_w) {
        if q > 0.0 {
            expected += q * (model.log_density(z)? + w.ln());
        }
    }
    Ok(expected + pop.weight_entropy())
}

fn into_update_error(e: EdaError) -> EdaError {
    match e {
        EdaError::DegenerateModel(msg) | EdaError::Domain(msg) => EdaError::DegenerateUpdate(msg),
        other => other,
    }
}

/// A fully resolved optimization run.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub model: SearchModel,
    pub objective: Objective,
    pub shaping: ShapingSpec,
    pub rule: UpdateRule,
    pub population: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Stop once `best_raw_f` has not improved for this many iterations.
    pub early_stop_window: Option<usize>,
    pub max_projections: usize,
}

/// Per-iteration diagnostics. `theta` is the parameter produced by this
/// iteration's M-step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub theta: ExpectationParams,
    pub best_raw_f: f64,
    pub mean_raw_f: f64,
    pub weighted_mean_shaped_f: f64,
    pub free_energy_estimate: f64,
    /// Free energy plus the (unnormalized) log prior; equals
    /// `free_energy_estimate` outside MAP mode.
    pub free_energy_map_estimate: f64,
    pub ess: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    Stagnated,
    Failed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub records: Vec<IterationRecord>,
    pub final_model: SearchModel,
    pub best_point: Option<Point>,
    pub best_value: f64,
    pub stop: StopReason,
}

impl Trace {
    pub fn final_state(&self) -> ModelState {
        self.final_model.to_state()
    }
}

/// A failed run: the error plus everything recorded before it.
#[derive(Debug)]
pub struct RunFailure {
    pub error: EdaError,
    pub trace: Trace,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run aborted after {} iterations: {}",
            self.trace.records.len(),
            self.error
        )
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Runs `spec.iterations` E/M iterations (or fewer with early stopping).
pub fn run(spec: &RunSpec) -> std::result::Result<Trace, RunFailure> {
    let mut trace = Trace {
        records: Vec::with_capacity(spec.iterations),
        final_model: spec.model.clone(),
        best_point: None,
        best_value: f64::NEG_INFINITY,
        stop: StopReason::Completed,
    };
    if let Err(error) = validate_spec(spec) {
        trace.stop = StopReason::Failed;
        return Err(RunFailure { error, trace });
    }

    let mut seeds = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut last_improvement = 0usize;
    for t in 0..spec.iterations {
        let seed = seeds.next_u64();
        match iterate(spec, &trace.final_model, seed, t) {
            Ok((record, model, best)) => {
                if best.1 > trace.best_value {
                    trace.best_value = best.1;
                    trace.best_point = Some(best.0);
                    last_improvement = t;
                }
                log::debug!(
                    "iter {t}: best {:.6} mean {:.6} ess {:.1}",
                    record.best_raw_f,
                    record.mean_raw_f,
                    record.ess
                );
                trace.records.push(record);
                trace.final_model = model;
            }
            Err(error) => {
                trace.stop = StopReason::Failed;
                return Err(RunFailure { error, trace });
            }
        }
        if let Some(window) = spec.early_stop_window {
            if t - last_improvement >= window {
                trace.stop = StopReason::Stagnated;
                break;
            }
        }
    }
    Ok(trace)
}

fn validate_spec(spec: &RunSpec) -> Result<()> {
    spec.rule.validate()?;
    spec.shaping.validate()?;
    if spec.population < 2 {
        return Err(EdaError::config("population", "must be >= 2"));
    }
    if spec.iterations == 0 {
        return Err(EdaError::config("iterations", "must be >= 1"));
    }
    check_compatible(&spec.model, spec.objective.domain())
}

fn iterate(
    spec: &RunSpec,
    model: &SearchModel,
    seed: u64,
    t: usize,
) -> Result<(IterationRecord, SearchModel, (Point, f64))> {
    let pop = e_step(model, &spec.objective, &spec.shaping, spec.population, seed)?;
    let theta_prev = model.params();
    let (theta, prior) = match spec.rule {
        UpdateRule::ClosedForm => (m_step_closed_form(&pop, model)?, None),
        UpdateRule::MapSmoothed { gamma } => {
            let tilde = m_step_closed_form(&pop, model)?;
            (
                m_step_map(&theta_prev, &tilde, gamma)?,
                Some(ConjugatePrior::smoothing(&theta_prev, gamma)),
            )
        }
        UpdateRule::Gradient { alpha, k } => (
            m_step_gradient_with(&pop, model, alpha, k, spec.max_projections)?,
            None,
        ),
    };
    let next = model.with_params(&theta).map_err(into_update_error)?;

    let (best_idx, best_raw_f) = pop
        .raw_f
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let mean_raw_f = pop.raw_f.iter().sum::<f64>() / pop.len() as f64;
    let weighted_mean_shaped_f = pop
        .norm_w
        .iter()
        .zip(&pop.shaped_w)
        .map(|(q, w)| q * w)
        .sum();
    let free_energy_estimate = particle_free_energy(&pop, &next)?;
    let free_energy_map_estimate = match &prior {
        Some(p) => free_energy_estimate + p.log_density_unnormalized(&next),
        None => free_energy_estimate,
    };
    let record = IterationRecord {
        iter: t,
        theta: next.params(),
        best_raw_f,
        mean_raw_f,
        weighted_mean_shaped_f,
        free_energy_estimate,
        free_energy_map_estimate,
        ess: pop.ess(),
    };
    Ok((record, next, (pop.samples[best_idx].clone(), best_raw_f)))
}
