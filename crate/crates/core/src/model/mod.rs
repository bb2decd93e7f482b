//! Exponential-family search models in expectation parameterization.
//!
//! Every model stores its expectation parameters `θ = E[T(z)]` as the
//! canonical state. Closed-form and smoothed M-steps are weighted means in
//! this layout, so they operate on [`ExpectationParams`] directly and hand
//! the result back to [`SearchModel::with_params`] for floor / PSD repair.
//!
//! Parameter layouts:
//!
//! | family               | layout                                            | D                 |
//! |----------------------|---------------------------------------------------|-------------------|
//! | `bernoulli`          | `p_1 .. p_d`                                      | `d`               |
//! | `categorical`        | per site, the first `K-1` probabilities           | `d (K-1)`         |
//! | `gaussian`           | `m_1 .. m_d`, then `S_ij` for `i <= j` row-major   | `d + d(d+1)/2`    |
//! | `gaussian_fixed_cov` | `m_1 .. m_d` (covariance held fixed)              | `d`               |

mod bernoulli;
mod categorical;
mod gaussian;

pub use bernoulli::BernoulliProductModel;
pub use categorical::CategoricalProductModel;
pub use gaussian::GaussianModel;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EdaError, Result};

/// A point of the search space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Point {
    Bits(Vec<u8>),
    Labels(Vec<usize>),
    Real(Vec<f64>),
}

impl Point {
    pub fn len(&self) -> usize {
        match self {
            Point::Bits(v) => v.len(),
            Point::Labels(v) => v.len(),
            Point::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Identifies the family (and shape) an expectation-parameter vector belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Bernoulli { dim: usize },
    Categorical { dim: usize, arity: usize },
    Gaussian { dim: usize },
    GaussianFixedCov { dim: usize },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Bernoulli { .. } => "bernoulli",
            Family::Categorical { .. } => "categorical",
            Family::Gaussian { .. } => "gaussian",
            Family::GaussianFixedCov { .. } => "gaussian_fixed_cov",
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Family::Bernoulli { dim }
            | Family::Categorical { dim, .. }
            | Family::Gaussian { dim }
            | Family::GaussianFixedCov { dim } => dim,
        }
    }

    /// Length `D` of the expectation-parameter vector.
    pub fn param_len(&self) -> usize {
        match *self {
            Family::Bernoulli { dim } | Family::GaussianFixedCov { dim } => dim,
            Family::Categorical { dim, arity } => dim * (arity - 1),
            Family::Gaussian { dim } => dim + dim * (dim + 1) / 2,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Family::Categorical { dim, arity } => format!("categorical(dim={dim}, arity={arity})"),
            f => format!("{}(dim={})", f.name(), f.dim()),
        }
    }
}

/// Expectation parameters `θ` tagged with their family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationParams {
    pub family: Family,
    pub values: Vec<f64>,
}

impl ExpectationParams {
    pub fn new(family: Family, values: Vec<f64>) -> Result<Self> {
        if values.len() != family.param_len() {
            return Err(EdaError::Input(format!(
                "{} expects {} expectation parameters, got {}",
                family.describe(),
                family.param_len(),
                values.len()
            )));
        }
        Ok(Self { family, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ensure_same_family(&self, other: &ExpectationParams) -> Result<()> {
        if self.family != other.family {
            return Err(EdaError::FamilyMismatch {
                expected: self.family.describe(),
                found: other.family.describe(),
            });
        }
        Ok(())
    }
}

/// Floors and jitter used when constructing or repairing models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Probability floor `ε` for Bernoulli and categorical entries.
    pub prob_floor: f64,
    /// Smallest admissible covariance eigenvalue for Gaussian models.
    pub eig_floor: f64,
    /// Relative jitter (times `trace(C)/d`) used by the PSD repair.
    pub jitter: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            prob_floor: 1e-3,
            eig_floor: 1e-12,
            jitter: 1e-10,
        }
    }
}

/// How out-of-domain parameter vectors are treated on construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Repair {
    /// Clamp to floors / run PSD repair.
    Project,
    /// Reject anything outside the valid domain.
    Reject,
}

/// An exponential-family search model `p(z|θ)`.
#[derive(Clone, Debug, PartialEq)]
pub enum SearchModel {
    Bernoulli(BernoulliProductModel),
    Categorical(CategoricalProductModel),
    Gaussian(GaussianModel),
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            SearchModel::Bernoulli($m) => $body,
            SearchModel::Categorical($m) => $body,
            SearchModel::Gaussian($m) => $body,
        }
    };
}

impl SearchModel {
    pub fn family(&self) -> Family {
        dispatch!(self, m => m.family())
    }

    pub fn options(&self) -> ModelOptions {
        dispatch!(self, m => m.options())
    }

    pub fn params(&self) -> ExpectationParams {
        ExpectationParams {
            family: self.family(),
            values: dispatch!(self, m => m.param_values()),
        }
    }

    /// Same family and options, new expectation parameters (projected onto the
    /// valid domain).
    pub fn with_params(&self, theta: &ExpectationParams) -> Result<SearchModel> {
        self.rebuild(theta, Repair::Project)
    }

    /// Same family and options, new expectation parameters; out-of-domain
    /// values are an error instead of being repaired.
    pub fn with_params_exact(&self, theta: &ExpectationParams) -> Result<SearchModel> {
        self.rebuild(theta, Repair::Reject)
    }

    fn rebuild(&self, theta: &ExpectationParams, repair: Repair) -> Result<SearchModel> {
        self.params().ensure_same_family(theta)?;
        Ok(match self {
            SearchModel::Bernoulli(m) => SearchModel::Bernoulli(m.with_values(&theta.values, repair)?),
            SearchModel::Categorical(m) => {
                SearchModel::Categorical(m.with_values(&theta.values, repair)?)
            }
            SearchModel::Gaussian(m) => SearchModel::Gaussian(m.with_values(&theta.values, repair)?),
        })
    }

    /// Projects a raw parameter vector onto the family's valid domain.
    pub fn repair(&self, theta: &ExpectationParams) -> Result<ExpectationParams> {
        Ok(self.with_params(theta)?.params())
    }

    /// `n` i.i.d. draws, reproducible from `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Point>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Point>> {
        if n == 0 {
            return Err(EdaError::Input("sample size must be at least 1".into()));
        }
        Ok(dispatch!(self, m => (0..n).map(|_| m.sample_one(rng)).collect()))
    }

    pub fn log_density(&self, z: &Point) -> Result<f64> {
        dispatch!(self, m => m.log_density(z))
    }

    pub fn sufficient_stats(&self, z: &Point) -> Result<Vec<f64>> {
        dispatch!(self, m => m.sufficient_stats(z))
    }

    /// `∇_θ log p(z|θ)` in the expectation layout.
    pub fn grad_log_density(&self, z: &Point) -> Result<Vec<f64>> {
        dispatch!(self, m => m.grad_log_density(z))
    }

    /// Score without the interior check; used by gradient M-steps whose
    /// projected iterates may sit on a floor.
    pub(crate) fn score(&self, z: &Point) -> Result<Vec<f64>> {
        dispatch!(self, m => m.score(z))
    }

    /// Fisher information with respect to the expectation parameters.
    pub fn fisher_information(&self) -> Result<DMatrix<f64>> {
        dispatch!(self, m => m.fisher_information())
    }

    /// Natural parameters `η(θ)`, paired with `T(z)` in the same layout.
    pub fn natural_params(&self) -> Vec<f64> {
        dispatch!(self, m => m.natural_params())
    }

    /// Log-partition `A(θ)`.
    pub fn log_partition(&self) -> f64 {
        dispatch!(self, m => m.log_partition())
    }

    /// True when some parameter sits on its floor.
    pub fn on_boundary(&self) -> bool {
        dispatch!(self, m => m.on_boundary())
    }

    /// Serializable snapshot `{family, dim, params}`.
    pub fn to_state(&self) -> ModelState {
        let family = self.family();
        let (arity, covariance) = match self {
            SearchModel::Categorical(m) => (Some(m.arity()), None),
            SearchModel::Gaussian(m) if m.is_fixed_covariance() => {
                let c = m.covariance();
                let rows = (0..c.nrows())
                    .map(|i| c.row(i).iter().copied().collect())
                    .collect();
                (None, Some(rows))
            }
            _ => (None, None),
        };
        ModelState {
            family: family.name().to_string(),
            dim: family.dim(),
            arity,
            params: self.params().values,
            covariance,
        }
    }

    pub fn from_state(state: &ModelState, options: ModelOptions) -> Result<SearchModel> {
        let bad = |msg: String| EdaError::Input(format!("model state: {msg}"));
        match state.family.as_str() {
            "bernoulli" => Ok(SearchModel::Bernoulli(BernoulliProductModel::new(
                state.params.clone(),
                options,
            )?)),
            "categorical" => {
                let arity = state.arity.ok_or_else(|| bad("categorical state needs `arity`".into()))?;
                let family = Family::Categorical {
                    dim: state.dim,
                    arity,
                };
                let theta = ExpectationParams::new(family, state.params.clone())?;
                Ok(SearchModel::Categorical(
                    CategoricalProductModel::uniform(state.dim, arity, options)?
                        .with_values(&theta.values, Repair::Reject)?,
                ))
            }
            "gaussian" => {
                let theta = ExpectationParams::new(Family::Gaussian { dim: state.dim }, state.params.clone())?;
                Ok(SearchModel::Gaussian(GaussianModel::from_values(
                    state.dim,
                    &theta.values,
                    options,
                    Repair::Reject,
                )?))
            }
            "gaussian_fixed_cov" => {
                let rows = state
                    .covariance
                    .as_ref()
                    .ok_or_else(|| bad("fixed-covariance state needs `covariance`".into()))?;
                let d = state.dim;
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(bad(format!("covariance must be {d}x{d}")));
                }
                let cov = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
                Ok(SearchModel::Gaussian(GaussianModel::fixed_covariance(
                    state.params.clone(),
                    cov,
                    options,
                )?))
            }
            other => Err(bad(format!("unknown family `{other}`"))),
        }
    }
}

/// JSON form of a model. Field order is part of the format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelState {
    pub family: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arity: Option<usize>,
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(EdaError::Input(format!("{what}[{i}] = {v} is not finite")));
    }
    Ok(())
}
