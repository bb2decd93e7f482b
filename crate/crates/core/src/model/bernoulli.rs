use nalgebra::DMatrix;
use rand::Rng;

use super::{check_finite, Family, ModelOptions, Point, Repair};
use crate::error::{EdaError, Result};

/// Product of independent Bernoulli bits; `θ_j = p_j = E[z_j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BernoulliProductModel {
    probs: Vec<f64>,
    options: ModelOptions,
}

impl BernoulliProductModel {
    /// Rejects probabilities outside `[ε, 1-ε]`.
    pub fn new(probs: Vec<f64>, options: ModelOptions) -> Result<Self> {
        Self::build(probs, options, Repair::Reject)
    }

    /// `p = 0.5` everywhere.
    pub fn uniform(dim: usize, options: ModelOptions) -> Result<Self> {
        Self::new(vec![0.5; dim], options)
    }

    fn build(mut probs: Vec<f64>, options: ModelOptions, repair: Repair) -> Result<Self> {
        if probs.is_empty() {
            return Err(EdaError::Input("bernoulli model needs dim >= 1".into()));
        }
        let eps = options.prob_floor;
        if !(eps > 0.0 && eps < 0.5) {
            return Err(EdaError::Input(format!("probability floor {eps} not in (0, 0.5)")));
        }
        check_finite(&probs, "p")?;
        for (j, p) in probs.iter_mut().enumerate() {
            if *p < eps || *p > 1.0 - eps {
                match repair {
                    Repair::Project => *p = p.clamp(eps, 1.0 - eps),
                    Repair::Reject => {
                        return Err(EdaError::Domain(format!(
                            "p[{j}] = {p} outside [{eps}, {}]",
                            1.0 - eps
                        )))
                    }
                }
            }
        }
        Ok(Self { probs, options })
    }

    pub(super) fn with_values(&self, values: &[f64], repair: Repair) -> Result<Self> {
        Self::build(values.to_vec(), self.options, repair)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    pub(super) fn family(&self) -> Family {
        Family::Bernoulli { dim: self.dim() }
    }

    pub(super) fn options(&self) -> ModelOptions {
        self.options
    }

    pub(super) fn param_values(&self) -> Vec<f64> {
        self.probs.clone()
    }

    pub(super) fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        Point::Bits(
            self.probs
                .iter()
                .map(|&p| u8::from(rng.random::<f64>() < p))
                .collect(),
        )
    }

    fn bits<'a>(&self, z: &'a Point) -> Result<&'a [u8]> {
        match z {
            Point::Bits(b) if b.len() == self.dim() => {
                if let Some(j) = b.iter().position(|&v| v > 1) {
                    return Err(EdaError::Domain(format!("bit {j} has value {}", b[j])));
                }
                Ok(b)
            }
            Point::Bits(b) => Err(EdaError::Domain(format!(
                "expected {} bits, got {}",
                self.dim(),
                b.len()
            ))),
            _ => Err(EdaError::Domain("bernoulli model expects a bit vector".into())),
        }
    }

    pub(super) fn log_density(&self, z: &Point) -> Result<f64> {
        let bits = self.bits(z)?;
        Ok(bits
            .iter()
            .zip(&self.probs)
            .map(|(&b, &p)| if b == 1 { p.ln() } else { (1.0 - p).ln() })
            .sum())
    }

    pub(super) fn sufficient_stats(&self, z: &Point) -> Result<Vec<f64>> {
        Ok(self.bits(z)?.iter().map(|&b| f64::from(b)).collect())
    }

    fn check_interior(&self) -> Result<()> {
        if self.on_boundary() {
            return Err(EdaError::Boundary(format!(
                "a bernoulli probability sits on the floor {}",
                self.options.prob_floor
            )));
        }
        Ok(())
    }

    pub(super) fn grad_log_density(&self, z: &Point) -> Result<Vec<f64>> {
        self.bits(z)?;
        self.check_interior()?;
        self.score(z)
    }

    pub(super) fn score(&self, z: &Point) -> Result<Vec<f64>> {
        let bits = self.bits(z)?;
        Ok(bits
            .iter()
            .zip(&self.probs)
            .map(|(&b, &p)| if b == 1 { 1.0 / p } else { -1.0 / (1.0 - p) })
            .collect())
    }

    pub(super) fn fisher_information(&self) -> Result<DMatrix<f64>> {
        self.check_interior()?;
        let d = self.dim();
        Ok(DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                1.0 / (self.probs[i] * (1.0 - self.probs[i]))
            } else {
                0.0
            }
        }))
    }

    pub(super) fn natural_params(&self) -> Vec<f64> {
        self.probs.iter().map(|&p| (p / (1.0 - p)).ln()).collect()
    }

    pub(super) fn log_partition(&self) -> f64 {
        self.probs.iter().map(|&p| -(1.0 - p).ln()).sum()
    }

    pub(super) fn on_boundary(&self) -> bool {
        let eps = self.options.prob_floor;
        let tol = eps * 1e-9;
        self.probs
            .iter()
            .any(|&p| p <= eps + tol || p >= 1.0 - eps - tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SearchModel;

    fn model(p: &[f64]) -> SearchModel {
        SearchModel::Bernoulli(BernoulliProductModel::new(p.to_vec(), ModelOptions::default()).unwrap())
    }

    #[test]
    fn log_density_examples() {
        let m = model(&[0.5, 0.5]);
        assert!((m.log_density(&Point::Bits(vec![0, 1])).unwrap() - 0.25f64.ln()).abs() < 1e-15);
        let m = model(&[0.75]);
        assert!((m.log_density(&Point::Bits(vec![1])).unwrap() - 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rejects_points_outside_support() {
        let m = model(&[0.5, 0.5]);
        assert!(matches!(m.log_density(&Point::Bits(vec![0, 2])), Err(EdaError::Domain(_))));
        assert!(matches!(m.log_density(&Point::Bits(vec![0])), Err(EdaError::Domain(_))));
        assert!(matches!(m.log_density(&Point::Real(vec![0.0, 1.0])), Err(EdaError::Domain(_))));
    }

    #[test]
    fn sufficient_stats_are_the_bits() {
        let m = model(&[0.5, 0.5, 0.5]);
        assert_eq!(m.sufficient_stats(&Point::Bits(vec![1, 0, 1])).unwrap(), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn score_examples() {
        let m = model(&[0.5]);
        assert_eq!(m.grad_log_density(&Point::Bits(vec![1])).unwrap(), vec![2.0]);
        assert_eq!(m.grad_log_density(&Point::Bits(vec![0])).unwrap(), vec![-2.0]);
    }

    #[test]
    fn fisher_examples() {
        let f = model(&[0.5]).fisher_information().unwrap();
        assert_eq!(f[(0, 0)], 4.0);
        let f = model(&[0.5, 0.1]).fisher_information().unwrap();
        assert_eq!(f[(0, 0)], 4.0);
        assert!((f[(1, 1)] - 1.0 / 0.09).abs() < 1e-12);
        assert_eq!(f[(0, 1)], 0.0);
    }

    #[test]
    fn boundary_blocks_gradient_and_fisher() {
        let eps = ModelOptions::default().prob_floor;
        let m = model(&[eps, 0.5]);
        assert!(m.on_boundary());
        assert!(matches!(m.grad_log_density(&Point::Bits(vec![1, 1])), Err(EdaError::Boundary(_))));
        assert!(matches!(m.fisher_information(), Err(EdaError::Boundary(_))));
    }

    #[test]
    fn projection_clamps_to_floor() {
        let m = model(&[0.5, 0.5]);
        let theta = crate::model::ExpectationParams::new(m.family(), vec![0.0, 1.2]).unwrap();
        let r = m.with_params(&theta).unwrap().params().values;
        assert_eq!(r, vec![1e-3, 1.0 - 1e-3]);
        assert!(m.with_params_exact(&theta).is_err());
    }

    #[test]
    fn near_point_mass_samples_all_ones() {
        let eps = ModelOptions::default().prob_floor;
        let m = model(&[1.0 - eps]);
        let ones: usize = m
            .sample(20_000, 3)
            .unwrap()
            .iter()
            .map(|z| match z {
                Point::Bits(b) => b[0] as usize,
                _ => unreachable!(),
            })
            .sum();
        // Expected 20 zeros; sd ≈ 4.5.
        let zeros = 20_000 - ones;
        assert!(zeros < 20 + 5 * 5, "zeros = {zeros}");
    }
}
