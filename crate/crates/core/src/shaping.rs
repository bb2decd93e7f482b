//! Monotone shaping functions `W(·)` that turn one generation's raw objective
//! values into nonnegative sample weights.
//!
//! Shaping is applied per generation: quantile, rank and CDF-threshold
//! weights depend on the whole batch of values, not on `f(z)` alone.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{EdaError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ShapingSpec {
    /// `W(f) = f`; requires `f >= 0`.
    Identity,
    /// `W(f) = exp(β (f - max f))`.
    Exponential { beta: f64 },
    /// Weight 1 on the `⌈ρN⌉` largest values, 0 elsewhere. Ties are broken
    /// by sample index (earlier sample wins).
    Quantile { rho: f64 },
    /// Weight `rank / N`, with tied values sharing their average rank.
    Rank,
    /// Weight 1 for every value at or above the empirical `level`-quantile.
    CdfThreshold { level: f64 },
}

impl ShapingSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ShapingSpec::Exponential { beta } if !(beta > 0.0 && beta.is_finite()) => Err(
                EdaError::config("shaping", format!("exp beta must be a positive real, got {beta}")),
            ),
            ShapingSpec::Quantile { rho } if !(rho > 0.0 && rho <= 1.0) => Err(EdaError::config(
                "shaping",
                format!("quantile rho must lie in (0, 1], got {rho}"),
            )),
            ShapingSpec::CdfThreshold { level } if !(0.0..1.0).contains(&level) => Err(
                EdaError::config("shaping", format!("cdf level must lie in [0, 1), got {level}")),
            ),
            _ => Ok(()),
        }
    }

    /// True when the kind only looks at the ordering of the values.
    pub fn is_rank_based(&self) -> bool {
        matches!(
            self,
            ShapingSpec::Quantile { .. } | ShapingSpec::Rank | ShapingSpec::CdfThreshold { .. }
        )
    }
}

impl fmt::Display for ShapingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShapingSpec::Identity => write!(f, "identity"),
            ShapingSpec::Exponential { beta } => write!(f, "exp:{beta}"),
            ShapingSpec::Quantile { rho } => write!(f, "quantile:{rho}"),
            ShapingSpec::Rank => write!(f, "rank"),
            ShapingSpec::CdfThreshold { level } => write!(f, "cdf:{level}"),
        }
    }
}

impl FromStr for ShapingSpec {
    type Err = EdaError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let number = |name: &str| -> Result<f64> {
            let a = arg.ok_or_else(|| {
                EdaError::config("shaping", format!("`{kind}` needs a parameter, e.g. `{kind}:{name}`"))
            })?;
            a.parse::<f64>()
                .map_err(|_| EdaError::config("shaping", format!("cannot parse `{a}` as a number")))
        };
        let spec = match kind {
            "identity" if arg.is_none() => ShapingSpec::Identity,
            "rank" if arg.is_none() => ShapingSpec::Rank,
            "exp" | "exponential" => ShapingSpec::Exponential { beta: number("beta")? },
            "quantile" => ShapingSpec::Quantile { rho: number("rho")? },
            "cdf" | "cdf_threshold" => ShapingSpec::CdfThreshold { level: number("level")? },
            _ => {
                return Err(EdaError::config(
                    "shaping",
                    format!("unknown shaping `{s}` (expected identity, rank, exp:B, quantile:R or cdf:Q)"),
                ))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl TryFrom<String> for ShapingSpec {
    type Error = EdaError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ShapingSpec> for String {
    fn from(s: ShapingSpec) -> String {
        s.to_string()
    }
}

/// Applies `W` to one generation of objective values.
pub fn shape(spec: &ShapingSpec, f_values: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = f_values.len();
    if n == 0 {
        return Err(EdaError::Input("cannot shape an empty generation".into()));
    }
    if let Some((i, v)) = f_values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(EdaError::Input(format!("objective value {v} at sample {i} is not finite")));
    }

    let weights = match *spec {
        ShapingSpec::Identity => {
            if let Some((i, v)) = f_values.iter().enumerate().find(|(_, v)| **v < 0.0) {
                return Err(EdaError::Input(format!(
                    "identity shaping requires f(z) >= 0, got {v} at sample {i}; \
                     use rank, quantile or exp shaping for signed objectives"
                )));
            }
            f_values.to_vec()
        }
        ShapingSpec::Exponential { beta } => {
            let max = f_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            f_values.iter().map(|&f| (beta * (f - max)).exp()).collect()
        }
        ShapingSpec::Quantile { rho } => {
            // Guard against ρN landing a hair above an integer.
            let keep = ((rho * n as f64) - 1e-9).ceil().max(0.0) as usize;
            let mut w = vec![0.0; n];
            for &i in descending_order(f_values).iter().take(keep.min(n)) {
                w[i] = 1.0;
            }
            w
        }
        ShapingSpec::Rank => average_ranks(f_values)
            .into_iter()
            .map(|r| r / n as f64)
            .collect(),
        ShapingSpec::CdfThreshold { level } => {
            let mut sorted = f_values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let idx = ((level * n as f64) - 1e-9).ceil().max(1.0) as usize - 1;
            let tau = sorted[idx.min(n - 1)];
            f_values.iter().map(|&f| if f >= tau { 1.0 } else { 0.0 }).collect()
        }
    };

    if weights.iter().all(|&w| w <= 0.0) {
        return Err(EdaError::DegenerateWeights(format!(
            "shaping `{spec}` produced all-zero weights for {n} samples"
        )));
    }
    Ok(weights)
}

/// Indices sorted by value, largest first; equal values keep index order.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| match values[b].total_cmp(&values[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    idx
}

/// 1-based ascending ranks; ties share the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}
