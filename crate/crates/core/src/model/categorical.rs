use nalgebra::DMatrix;
use rand::Rng;

use super::{check_finite, Family, ModelOptions, Point, Repair};
use crate::error::{EdaError, Result};

/// Independent categorical sites with `K` labels each.
///
/// The expectation layout keeps the first `K-1` probabilities of every site;
/// the last one is implied, which keeps the Fisher information nonsingular.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalProductModel {
    probs: Vec<Vec<f64>>,
    arity: usize,
    options: ModelOptions,
}

impl CategoricalProductModel {
    /// Rows must each sum to 1 (within 1e-12) with every entry `>= ε`.
    pub fn new(probs: Vec<Vec<f64>>, options: ModelOptions) -> Result<Self> {
        let arity = probs.first().map(Vec::len).unwrap_or(0);
        Self::validate_shape(probs.len(), arity, options)?;
        if probs.iter().any(|r| r.len() != arity) {
            return Err(EdaError::Input("categorical rows must share one arity".into()));
        }
        for (j, row) in probs.iter().enumerate() {
            check_finite(row, "p")?;
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(EdaError::Domain(format!("row {j} sums to {s}")));
            }
        }
        let values = Self::flatten(&probs);
        Self::build(probs.len(), arity, &values, options, Repair::Reject)
    }

    pub fn uniform(dim: usize, arity: usize, options: ModelOptions) -> Result<Self> {
        Self::validate_shape(dim, arity, options)?;
        Ok(Self {
            probs: vec![vec![1.0 / arity as f64; arity]; dim],
            arity,
            options,
        })
    }

    fn validate_shape(dim: usize, arity: usize, options: ModelOptions) -> Result<()> {
        if dim == 0 || arity < 2 {
            return Err(EdaError::Input(format!(
                "categorical model needs dim >= 1 and arity >= 2 (got {dim}, {arity})"
            )));
        }
        let eps = options.prob_floor;
        if !(eps > 0.0 && eps * arity as f64 <= 1.0) {
            return Err(EdaError::Input(format!(
                "probability floor {eps} incompatible with arity {arity}"
            )));
        }
        Ok(())
    }

    fn flatten(probs: &[Vec<f64>]) -> Vec<f64> {
        probs
            .iter()
            .flat_map(|r| r[..r.len() - 1].iter().copied())
            .collect()
    }

    fn build(
        dim: usize,
        arity: usize,
        values: &[f64],
        options: ModelOptions,
        repair: Repair,
    ) -> Result<Self> {
        check_finite(values, "theta")?;
        let eps = options.prob_floor;
        let mut probs = Vec::with_capacity(dim);
        for (j, chunk) in values.chunks(arity - 1).enumerate() {
            let mut row = chunk.to_vec();
            row.push(1.0 - chunk.iter().sum::<f64>());
            let out_of_range = row.iter().any(|&p| p < eps - 1e-15);
            match (out_of_range, repair) {
                (false, _) => {}
                (true, Repair::Project) => row = floor_simplex(&row, eps),
                (true, Repair::Reject) => {
                    return Err(EdaError::Domain(format!(
                        "site {j} probabilities {row:?} fall below the floor {eps}"
                    )))
                }
            }
            probs.push(row);
        }
        Ok(Self {
            probs,
            arity,
            options,
        })
    }

    pub(super) fn with_values(&self, values: &[f64], repair: Repair) -> Result<Self> {
        Self::build(self.dim(), self.arity, values, self.options, repair)
    }

    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub(super) fn family(&self) -> Family {
        Family::Categorical {
            dim: self.dim(),
            arity: self.arity,
        }
    }

    pub(super) fn options(&self) -> ModelOptions {
        self.options
    }

    pub(super) fn param_values(&self) -> Vec<f64> {
        Self::flatten(&self.probs)
    }

    pub(super) fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        Point::Labels(
            self.probs
                .iter()
                .map(|row| {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    for (k, &p) in row.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            return k;
                        }
                    }
                    row.len() - 1
                })
                .collect(),
        )
    }

    fn labels<'a>(&self, z: &'a Point) -> Result<&'a [usize]> {
        match z {
            Point::Labels(l) if l.len() == self.dim() => {
                if let Some(j) = l.iter().position(|&v| v >= self.arity) {
                    return Err(EdaError::Domain(format!(
                        "label {} at site {j} exceeds arity {}",
                        l[j], self.arity
                    )));
                }
                Ok(l)
            }
            Point::Labels(l) => Err(EdaError::Domain(format!(
                "expected {} labels, got {}",
                self.dim(),
                l.len()
            ))),
            _ => Err(EdaError::Domain("categorical model expects a label vector".into())),
        }
    }

    /// Full one-hot encoding (all `K` coordinates per site).
    pub fn one_hot(&self, z: &Point) -> Result<Vec<f64>> {
        let labels = self.labels(z)?;
        let mut out = vec![0.0; self.dim() * self.arity];
        for (j, &k) in labels.iter().enumerate() {
            out[j * self.arity + k] = 1.0;
        }
        Ok(out)
    }

    pub(super) fn log_density(&self, z: &Point) -> Result<f64> {
        let labels = self.labels(z)?;
        Ok(labels
            .iter()
            .zip(&self.probs)
            .map(|(&k, row)| row[k].ln())
            .sum())
    }

    pub(super) fn sufficient_stats(&self, z: &Point) -> Result<Vec<f64>> {
        let labels = self.labels(z)?;
        let km1 = self.arity - 1;
        let mut out = vec![0.0; self.dim() * km1];
        for (j, &k) in labels.iter().enumerate() {
            if k < km1 {
                out[j * km1 + k] = 1.0;
            }
        }
        Ok(out)
    }

    fn check_interior(&self) -> Result<()> {
        if self.on_boundary() {
            return Err(EdaError::Boundary(format!(
                "a categorical probability sits on the floor {}",
                self.options.prob_floor
            )));
        }
        Ok(())
    }

    pub(super) fn grad_log_density(&self, z: &Point) -> Result<Vec<f64>> {
        self.labels(z)?;
        self.check_interior()?;
        self.score(z)
    }

    pub(super) fn score(&self, z: &Point) -> Result<Vec<f64>> {
        let labels = self.labels(z)?;
        let km1 = self.arity - 1;
        let mut out = vec![0.0; self.dim() * km1];
        for (j, (&k, row)) in labels.iter().zip(&self.probs).enumerate() {
            let site = &mut out[j * km1..(j + 1) * km1];
            if k < km1 {
                site[k] = 1.0 / row[k];
            } else {
                let g = -1.0 / row[km1];
                site.iter_mut().for_each(|s| *s = g);
            }
        }
        Ok(out)
    }

    pub(super) fn fisher_information(&self) -> Result<DMatrix<f64>> {
        self.check_interior()?;
        let km1 = self.arity - 1;
        let n = self.dim() * km1;
        let mut fisher = DMatrix::zeros(n, n);
        for (j, row) in self.probs.iter().enumerate() {
            let last = 1.0 / row[km1];
            for a in 0..km1 {
                for b in 0..km1 {
                    let diag = if a == b { 1.0 / row[a] } else { 0.0 };
                    fisher[(j * km1 + a, j * km1 + b)] = diag + last;
                }
            }
        }
        Ok(fisher)
    }

    pub(super) fn natural_params(&self) -> Vec<f64> {
        let km1 = self.arity - 1;
        self.probs
            .iter()
            .flat_map(|row| row[..km1].iter().map(move |&p| (p / row[km1]).ln()))
            .collect()
    }

    pub(super) fn log_partition(&self) -> f64 {
        let km1 = self.arity - 1;
        self.probs.iter().map(|row| -row[km1].ln()).sum()
    }

    pub(super) fn on_boundary(&self) -> bool {
        let eps = self.options.prob_floor;
        let tol = eps * 1e-9;
        self.probs.iter().flatten().any(|&p| p <= eps + tol)
    }
}

/// Projects a row onto `{p : Σp = 1, p_k >= ε}` by fixing violators at `ε`
/// and rescaling the rest proportionally. This is the constrained maximizer
/// of `Σ c_k log p_k` when the input is proportional to `c`.
fn floor_simplex(row: &[f64], eps: f64) -> Vec<f64> {
    let k = row.len();
    let clipped: Vec<f64> = row.iter().map(|&p| p.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total <= 0.0 {
        return vec![1.0 / k as f64; k];
    }
    let mut fixed = vec![false; k];
    loop {
        let n_fixed = fixed.iter().filter(|&&f| f).count();
        let free_mass: f64 = (0..k).filter(|&i| !fixed[i]).map(|i| clipped[i]).sum();
        let budget = 1.0 - n_fixed as f64 * eps;
        if free_mass <= 0.0 {
            // Only floored entries carry mass; spread the budget evenly.
            let share = budget / (k - n_fixed).max(1) as f64;
            return (0..k).map(|i| if fixed[i] { eps } else { share }).collect();
        }
        let out: Vec<f64> = (0..k)
            .map(|i| if fixed[i] { eps } else { clipped[i] * budget / free_mass })
            .collect();
        let mut changed = false;
        for i in 0..k {
            if !fixed[i] && out[i] < eps {
                fixed[i] = true;
                changed = true;
            }
        }
        if !changed {
            return out;
        }
    }
}
