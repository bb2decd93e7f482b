use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_finite, Family, ModelOptions, Point, Repair};
use crate::error::{EdaError, Result};

/// Multivariate normal in expectation parameters `(m, S) = (E[z], E[zzᵀ])`.
///
/// The covariance `C = S - mmᵀ` is a derived view, cached together with its
/// Cholesky factor. With `fixed_covariance` the model is the mean-only
/// family `N(m, C₀)`: `θ = m`, `T(z) = z`.
///
/// Note: smoothing in this layout mixes second moments, not covariances as
/// CMA-ES does; the two differ by a rank-one term in the mean shift.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianModel {
    mean: DVector<f64>,
    second: DMatrix<f64>,
    cov: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_det: f64,
    min_eig: f64,
    fixed: bool,
    options: ModelOptions,
}

/// Iterates the `(i, j)` pairs with `i <= j` in layout order.
pub(crate) fn upper_pairs(d: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..d).flat_map(move |i| (i..d).map(move |j| (i, j)))
}

impl GaussianModel {
    /// Full model from a mean and covariance; rejects non-PD covariances.
    pub fn from_mean_cov(mean: Vec<f64>, cov: DMatrix<f64>, options: ModelOptions) -> Result<Self> {
        let mean = DVector::from_vec(mean);
        check_shape(&mean, &cov)?;
        Self::assemble(mean, cov, None, false, options, Repair::Reject)
    }

    /// `N(mean, std² I)`.
    pub fn isotropic(mean: Vec<f64>, std: f64, options: ModelOptions) -> Result<Self> {
        if !(std > 0.0 && std.is_finite()) {
            return Err(EdaError::Input(format!("std must be positive, got {std}")));
        }
        let d = mean.len();
        Self::from_mean_cov(mean, DMatrix::identity(d, d) * (std * std), options)
    }

    /// Mean-only model with the covariance held at `cov`.
    pub fn fixed_covariance(mean: Vec<f64>, cov: DMatrix<f64>, options: ModelOptions) -> Result<Self> {
        let mean = DVector::from_vec(mean);
        check_shape(&mean, &cov)?;
        Self::assemble(mean, cov, None, true, options, Repair::Reject)
    }

    /// Full model from the `(m, upper(S))` layout.
    pub fn from_values(dim: usize, values: &[f64], options: ModelOptions, repair: Repair) -> Result<Self> {
        if dim == 0 || values.len() != dim + dim * (dim + 1) / 2 {
            return Err(EdaError::Input(format!(
                "gaussian(dim={dim}) expects {} parameters, got {}",
                dim + dim * (dim + 1) / 2,
                values.len()
            )));
        }
        check_finite(values, "theta")?;
        let mean = DVector::from_column_slice(&values[..dim]);
        let mut second = DMatrix::zeros(dim, dim);
        for ((i, j), &v) in upper_pairs(dim).zip(&values[dim..]) {
            second[(i, j)] = v;
            second[(j, i)] = v;
        }
        let cov = &second - &mean * mean.transpose();
        Self::assemble(mean, cov, Some(second), false, options, repair)
    }

    fn assemble(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        second: Option<DMatrix<f64>>,
        fixed: bool,
        options: ModelOptions,
        repair: Repair,
    ) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(EdaError::Input("gaussian model needs dim >= 1".into()));
        }
        check_finite(mean.as_slice(), "mean")?;
        check_finite(cov.as_slice(), "covariance")?;
        if !(options.eig_floor > 0.0) {
            return Err(EdaError::Input("eigenvalue floor must be positive".into()));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let floor = options.eig_floor;
        let min_eig = min_eigenvalue(&cov);

        let (cov, chol, repaired) = match (cov.clone().cholesky(), min_eig >= floor) {
            (Some(ch), true) => (cov, ch, false),
            _ if repair == Repair::Reject || fixed => {
                return Err(EdaError::Domain(format!(
                    "covariance has smallest eigenvalue {min_eig:e} below the floor {floor:e}"
                )))
            }
            _ => {
                let trace_scale = (cov.trace() / d as f64).abs();
                let mut jitter = (options.jitter * trace_scale)
                    .max(floor - min_eig)
                    .max(f64::MIN_POSITIVE);
                let mut found = None;
                for _ in 0..=10 {
                    let candidate = &cov + DMatrix::identity(d, d) * jitter;
                    if min_eigenvalue(&candidate) >= floor {
                        if let Some(ch) = candidate.clone().cholesky() {
                            found = Some((candidate, ch));
                            break;
                        }
                    }
                    jitter *= 2.0;
                }
                let (c, ch) = found.ok_or_else(|| {
                    EdaError::DegenerateModel(format!(
                        "PSD repair failed after 10 jitter doublings (smallest eigenvalue {min_eig:e})"
                    ))
                })?;
                (c, ch, true)
            }
        };

        let chol_lower = chol.l();
        let precision = chol.inverse();
        let precision = (&precision + precision.transpose()) * 0.5;
        let log_det = 2.0 * chol_lower.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let second = match second {
            Some(s) if !repaired => s,
            _ => &cov + &mean * mean.transpose(),
        };
        let second = (&second + second.transpose()) * 0.5;
        let min_eig = min_eigenvalue(&cov);
        Ok(Self {
            mean,
            second,
            cov,
            chol_lower,
            precision,
            log_det,
            min_eig,
            fixed,
            options,
        })
    }

    pub(super) fn with_values(&self, values: &[f64], repair: Repair) -> Result<Self> {
        if self.fixed {
            if values.len() != self.dim() {
                return Err(EdaError::Input(format!(
                    "expected {} mean parameters, got {}",
                    self.dim(),
                    values.len()
                )));
            }
            check_finite(values, "mean")?;
            let mut out = self.clone();
            out.mean = DVector::from_column_slice(values);
            out.second = &out.cov + &out.mean * out.mean.transpose();
            return Ok(out);
        }
        Self::from_values(self.dim(), values, self.options, repair)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn second_moment(&self) -> &DMatrix<f64> {
        &self.second
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eig
    }

    pub fn is_fixed_covariance(&self) -> bool {
        self.fixed
    }

    pub(super) fn family(&self) -> Family {
        if self.fixed {
            Family::GaussianFixedCov { dim: self.dim() }
        } else {
            Family::Gaussian { dim: self.dim() }
        }
    }

    pub(super) fn options(&self) -> ModelOptions {
        self.options
    }

    pub(super) fn param_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.mean.iter().copied().collect();
        if !self.fixed {
            v.extend(upper_pairs(self.dim()).map(|(i, j)| self.second[(i, j)]));
        }
        v
    }

    pub(super) fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let d = self.dim();
        let xi = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let z = &self.mean + &self.chol_lower * xi;
        Point::Real(z.iter().copied().collect())
    }

    fn coords(&self, z: &Point) -> Result<DVector<f64>> {
        match z {
            Point::Real(v) if v.len() == self.dim() => {
                check_finite(v, "z").map_err(|e| EdaError::Domain(e.to_string()))?;
                Ok(DVector::from_column_slice(v))
            }
            Point::Real(v) => Err(EdaError::Domain(format!(
                "expected {} coordinates, got {}",
                self.dim(),
                v.len()
            ))),
            _ => Err(EdaError::Domain("gaussian model expects a real vector".into())),
        }
    }

    pub(super) fn log_density(&self, z: &Point) -> Result<f64> {
        let r = self.coords(z)? - &self.mean;
        let w = self
            .chol_lower
            .solve_lower_triangular(&r)
            .ok_or_else(|| EdaError::DegenerateModel("singular Cholesky factor".into()))?;
        let d = self.dim() as f64;
        Ok(-0.5 * d * (2.0 * PI).ln() - 0.5 * self.log_det - 0.5 * w.norm_squared())
    }

    pub(super) fn sufficient_stats(&self, z: &Point) -> Result<Vec<f64>> {
        let x = self.coords(z)?;
        let mut t: Vec<f64> = x.iter().copied().collect();
        if !self.fixed {
            t.extend(upper_pairs(self.dim()).map(|(i, j)| x[i] * x[j]));
        }
        Ok(t)
    }

    fn check_interior(&self) -> Result<()> {
        if !self.fixed && self.min_eig <= self.options.eig_floor * (1.0 + 1e-9) {
            return Err(EdaError::Boundary(format!(
                "covariance eigenvalue {:e} at the floor {:e}",
                self.min_eig, self.options.eig_floor
            )));
        }
        Ok(())
    }

    pub(super) fn grad_log_density(&self, z: &Point) -> Result<Vec<f64>> {
        self.coords(z)?;
        self.check_interior()?;
        self.score(z)
    }

    pub(super) fn score(&self, z: &Point) -> Result<Vec<f64>> {
        let x = self.coords(z)?;
        let r = &x - &self.mean;
        let pr = &self.precision * &r;
        if self.fixed {
            return Ok(pr.iter().copied().collect());
        }
        // ∂ log p / ∂C, with C treated as an unconstrained matrix.
        let g = (&pr * pr.transpose() - &self.precision) * 0.5;
        let grad_m = &pr - (&g * &self.mean) * 2.0;
        let mut out: Vec<f64> = grad_m.iter().copied().collect();
        out.extend(upper_pairs(self.dim()).map(|(i, j)| if i == j { g[(i, i)] } else { 2.0 * g[(i, j)] }));
        Ok(out)
    }

    /// `Cov[T(z)]` in the expectation layout.
    pub fn sufficient_stat_covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let c = &self.cov;
        let m = &self.mean;
        if self.fixed {
            return c.clone();
        }
        let pairs: Vec<(usize, usize)> = upper_pairs(d).collect();
        let n = d + pairs.len();
        let mut sigma = DMatrix::zeros(n, n);
        for a in 0..d {
            for b in 0..d {
                sigma[(a, b)] = c[(a, b)];
            }
            for (p, &(i, j)) in pairs.iter().enumerate() {
                let v = m[i] * c[(j, a)] + m[j] * c[(i, a)];
                sigma[(a, d + p)] = v;
                sigma[(d + p, a)] = v;
            }
        }
        for (p, &(i, j)) in pairs.iter().enumerate() {
            for (q, &(k, l)) in pairs.iter().enumerate() {
                sigma[(d + p, d + q)] = c[(i, k)] * c[(j, l)]
                    + c[(i, l)] * c[(j, k)]
                    + m[i] * m[k] * c[(j, l)]
                    + m[i] * m[l] * c[(j, k)]
                    + m[j] * m[k] * c[(i, l)]
                    + m[j] * m[l] * c[(i, k)];
            }
        }
        sigma
    }

    /// Fisher information in expectation parameters, `Cov[T]⁻¹`.
    pub(super) fn fisher_information(&self) -> Result<DMatrix<f64>> {
        self.check_interior()?;
        if self.fixed {
            return Ok(self.precision.clone());
        }
        let sigma = self.sufficient_stat_covariance();
        let inv = sigma
            .cholesky()
            .ok_or_else(|| EdaError::DegenerateModel("sufficient-statistic covariance is singular".into()))?
            .inverse();
        Ok((&inv + inv.transpose()) * 0.5)
    }

    pub(super) fn natural_params(&self) -> Vec<f64> {
        let eta_m = &self.precision * &self.mean;
        let mut out: Vec<f64> = eta_m.iter().copied().collect();
        if !self.fixed {
            out.extend(upper_pairs(self.dim()).map(|(i, j)| {
                if i == j {
                    -0.5 * self.precision[(i, i)]
                } else {
                    -self.precision[(i, j)]
                }
            }));
        }
        out
    }

    pub(super) fn log_partition(&self) -> f64 {
        let quad = self.mean.dot(&(&self.precision * &self.mean));
        if self.fixed {
            0.5 * quad
        } else {
            0.5 * quad + 0.5 * self.log_det
        }
    }

    pub(super) fn on_boundary(&self) -> bool {
        !self.fixed && self.min_eig <= self.options.eig_floor * (1.0 + 1e-9)
    }
}

fn check_shape(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<()> {
    let d = mean.len();
    if cov.nrows() != d || cov.ncols() != d {
        return Err(EdaError::Input(format!(
            "covariance is {}x{}, mean has {d} entries",
            cov.nrows(),
            cov.ncols()
        )));
    }
    Ok(())
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.iter().any(|v| !v.is_finite()) {
        return f64::NAN;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
