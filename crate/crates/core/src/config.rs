//! JSON run configuration. Unknown keys are rejected and every field is
//! validated before any sampling happens.
//!
//! ```json
//! {
//!   "objective": "onemax:32",
//!   "model": { "family": "bernoulli" },
//!   "shaping": "quantile:0.5",
//!   "update": { "kind": "map_smoothed", "gamma": 0.8 },
//!   "population": 200,
//!   "iterations": 200,
//!   "seed": 1
//! }
//! ```

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::engine::{RunSpec, UpdateRule, DEFAULT_MAX_PROJECTIONS};
use crate::error::{EdaError, Result};
use crate::model::{
    BernoulliProductModel, CategoricalProductModel, GaussianModel, ModelOptions, SearchModel,
};
use crate::objectives::{Domain, Objective};
use crate::shaping::ShapingSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Objective spec, e.g. `onemax:32`, `sphere:10`, `trap:5x6+1`.
    pub objective: String,
    #[serde(default)]
    pub model: ModelConfig,
    /// Shaping spec, e.g. `quantile:0.5`, `rank`, `exp:2`.
    pub shaping: ShapingSpec,
    #[serde(default = "default_update")]
    pub update: UpdateRule,
    /// Samples per generation `N` (>= 2).
    pub population: usize,
    /// Iterations `T` (>= 1).
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop_window: Option<usize>,
    /// Value counted as "reached" by sweeps; defaults to the objective's
    /// known optimum (minus `1e-6` on continuous domains).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default = "default_max_projections")]
    pub max_projections: usize,
}

fn default_update() -> UpdateRule {
    UpdateRule::ClosedForm
}

fn default_max_projections() -> usize {
    DEFAULT_MAX_PROJECTIONS
}

/// Search-model family and initial parameters. Omitted parameters take the
/// family default: `p = 0.5`, uniform categorical rows, or `N(0, I)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `bernoulli`, `categorical`, `gaussian` or `gaussian_fixed_cov`;
    /// inferred from the objective's domain when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    /// Bernoulli probabilities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    /// Categorical rows, one per coordinate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    /// Isotropic standard deviation; exclusive with `cov`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eig_floor: Option<f64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            let message = e.to_string();
            // serde_json reports the offending key in the message.
            let field = message
                .split('`')
                .nth(1)
                .filter(|_| message.starts_with("unknown field") || message.starts_with("missing field"))
                .unwrap_or("config")
                .to_string();
            EdaError::config(field, message)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EdaError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn objective(&self) -> Result<Objective> {
        self.objective
            .parse()
            .map_err(|e: EdaError| EdaError::config("objective", e.to_string()))
    }

    /// The threshold sweeps count as success.
    pub fn target_value(&self) -> Result<Option<f64>> {
        if let Some(t) = self.target {
            return Ok(Some(t));
        }
        let objective = self.objective()?;
        Ok(objective.known_opt().map(|(_, v)| match objective.domain() {
            Domain::Real { .. } => v - 1e-6,
            _ => v,
        }))
    }

    /// Validates every field and builds the engine input.
    pub fn to_spec(&self) -> Result<RunSpec> {
        let objective = self.objective()?;
        self.shaping.validate()?;
        self.update.validate()?;
        if self.population < 2 {
            return Err(EdaError::config(
                "population",
                format!("must be an integer >= 2, got {}", self.population),
            ));
        }
        if self.iterations == 0 {
            return Err(EdaError::config("iterations", "must be an integer >= 1, got 0"));
        }
        if self.early_stop_window == Some(0) {
            return Err(EdaError::config("early_stop_window", "must be >= 1 when given"));
        }
        if let Some(t) = self.target {
            if !t.is_finite() {
                return Err(EdaError::config("target", format!("must be finite, got {t}")));
            }
        }
        let model = self.model.build(objective.domain())?;
        Ok(RunSpec {
            model,
            objective,
            shaping: self.shaping,
            rule: self.update,
            population: self.population,
            iterations: self.iterations,
            seed: self.seed,
            early_stop_window: self.early_stop_window,
            max_projections: self.max_projections,
        })
    }
}

impl ModelConfig {
    fn options(&self) -> Result<ModelOptions> {
        let mut opts = ModelOptions::default();
        if let Some(eps) = self.prob_floor {
            if !(eps > 0.0 && eps < 0.5) {
                return Err(EdaError::config("model.prob_floor", format!("must lie in (0, 0.5), got {eps}")));
            }
            opts.prob_floor = eps;
        }
        if let Some(floor) = self.eig_floor {
            if !(floor > 0.0 && floor.is_finite()) {
                return Err(EdaError::config("model.eig_floor", format!("must be a positive real, got {floor}")));
            }
            opts.eig_floor = floor;
        }
        Ok(opts)
    }

    fn unused(&self, fields: &[(&str, bool)], family: &str) -> Result<()> {
        for (name, present) in fields {
            if *present {
                return Err(EdaError::config(
                    format!("model.{name}"),
                    format!("not used by the {family} family"),
                ));
            }
        }
        Ok(())
    }

    pub fn build(&self, domain: Domain) -> Result<SearchModel> {
        let opts = self.options()?;
        let family = match (&self.family, domain) {
            (Some(f), _) => f.as_str(),
            (None, Domain::Binary { .. }) => "bernoulli",
            (None, Domain::Categorical { .. }) => "categorical",
            (None, Domain::Real { .. }) => "gaussian",
        };
        fn wrap(field: &'static str) -> impl Fn(EdaError) -> EdaError {
            move |e| EdaError::config(format!("model.{field}"), e.to_string())
        }
        let dim = domain.dim();
        let check_len = |field: &str, len: usize| -> Result<()> {
            if len != dim {
                return Err(EdaError::config(
                    format!("model.{field}"),
                    format!("has {len} entries, objective dimension is {dim}"),
                ));
            }
            Ok(())
        };
        match (family, domain) {
            ("bernoulli", Domain::Binary { dim }) => {
                self.unused(
                    &[("rows", self.rows.is_some()), ("mean", self.mean.is_some()), ("std", self.std.is_some()), ("cov", self.cov.is_some())],
                    family,
                )?;
                let probs = self.probs.clone().unwrap_or_else(|| vec![0.5; dim]);
                check_len("probs", probs.len())?;
                Ok(SearchModel::Bernoulli(BernoulliProductModel::new(probs, opts).map_err(wrap("probs"))?))
            }
            ("categorical", Domain::Categorical { dim, arity }) => {
                self.unused(
                    &[("probs", self.probs.is_some()), ("mean", self.mean.is_some()), ("std", self.std.is_some()), ("cov", self.cov.is_some())],
                    family,
                )?;
                let model = match &self.rows {
                    Some(rows) => {
                        check_len("rows", rows.len())?;
                        if let Some(r) = rows.iter().find(|r| r.len() != arity) {
                            return Err(EdaError::config(
                                "model.rows",
                                format!("row has {} entries, objective arity is {arity}", r.len()),
                            ));
                        }
                        CategoricalProductModel::new(rows.clone(), opts).map_err(wrap("rows"))?
                    }
                    None => CategoricalProductModel::uniform(dim, arity, opts).map_err(wrap("rows"))?,
                };
                Ok(SearchModel::Categorical(model))
            }
            ("gaussian" | "gaussian_fixed_cov", Domain::Real { dim }) => {
                self.unused(&[("probs", self.probs.is_some()), ("rows", self.rows.is_some())], family)?;
                let mean = self.mean.clone().unwrap_or_else(|| vec![0.0; dim]);
                check_len("mean", mean.len())?;
                let cov = match (&self.std, &self.cov) {
                    (Some(_), Some(_)) => {
                        return Err(EdaError::config("model.std", "give at most one of `std` and `cov`"))
                    }
                    (Some(s), None) => {
                        let s = *s;
                        if !(s > 0.0 && s.is_finite()) {
                            return Err(EdaError::config("model.std", format!("must be a positive real, got {s}")));
                        }
                        DMatrix::from_diagonal_element(dim, dim, s * s)
                    }
                    (None, Some(rows)) => {
                        if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                            return Err(EdaError::config("model.cov", format!("must be a {dim}x{dim} matrix")));
                        }
                        DMatrix::from_fn(dim, dim, |i, j| rows[i][j])
                    }
                    (None, None) => DMatrix::identity(dim, dim),
                };
                let g = if family == "gaussian" {
                    GaussianModel::from_mean_cov(mean, cov, opts)
                } else {
                    GaussianModel::fixed_covariance(mean, cov, opts)
                };
                Ok(SearchModel::Gaussian(g.map_err(wrap("cov"))?))
            }
            ("bernoulli" | "categorical" | "gaussian" | "gaussian_fixed_cov", _) => Err(EdaError::config(
                "model.family",
                format!("{family} cannot search the domain of this objective ({domain:?})"),
            )),
            (other, _) => Err(EdaError::config(
                "model.family",
                format!("unknown family `{other}` (expected bernoulli, categorical, gaussian or gaussian_fixed_cov)"),
            )),
        }
    }
}
