#![allow(dead_code)]

use edaem::engine::Population;
use edaem::model::{
    BernoulliProductModel, CategoricalProductModel, ExpectationParams, GaussianModel, ModelOptions,
    Point, SearchModel,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn bern(p: &[f64]) -> SearchModel {
    SearchModel::Bernoulli(BernoulliProductModel::new(p.to_vec(), ModelOptions::default()).unwrap())
}

pub fn random_bernoulli(r: &mut ChaCha8Rng, dim: usize) -> SearchModel {
    bern(&(0..dim).map(|_| r.random_range(0.1..0.9)).collect::<Vec<_>>())
}

pub fn random_categorical(r: &mut ChaCha8Rng, dim: usize, arity: usize) -> SearchModel {
    let rows = (0..dim)
        .map(|_| {
            let raw: Vec<f64> = (0..arity).map(|_| r.random_range(0.2..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let mut row: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let head: f64 = row[..arity - 1].iter().sum();
            row[arity - 1] = 1.0 - head;
            row
        })
        .collect();
    SearchModel::Categorical(CategoricalProductModel::new(rows, ModelOptions::default()).unwrap())
}

pub fn random_gaussian(r: &mut ChaCha8Rng, dim: usize) -> SearchModel {
    let mean: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
    let a = DMatrix::from_fn(dim, dim, |_, _| r.random_range(-0.5..0.5));
    let cov = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5;
    SearchModel::Gaussian(GaussianModel::from_mean_cov(mean, cov, ModelOptions::default()).unwrap())
}

/// A random population drawn from `model` with positive random weights.
pub fn random_population(model: &SearchModel, n: usize, r: &mut ChaCha8Rng) -> Population {
    let samples = model.sample_with(n, r).unwrap();
    let weights = (0..n).map(|_| r.random_range(0.05..2.0)).collect();
    Population::from_weights(samples, weights).unwrap()
}

/// Every sufficient-statistic coordinate varies across the population, so
/// the weighted mean is interior.
pub fn stats_vary(model: &SearchModel, pop: &Population) -> bool {
    let stats: Vec<Vec<f64>> = pop.samples.iter().map(|z| model.sufficient_stats(z).unwrap()).collect();
    (0..stats[0].len()).all(|j| stats.iter().any(|s| s[j] != stats[0][j]))
}

/// Kind `i % 3` of the three discrete/continuous families, with a
/// population whose weighted statistics are interior.
pub fn random_fixture(seed: u64) -> (SearchModel, Population) {
    let mut r = rng(seed);
    loop {
        let model = match seed % 3 {
            0 => random_bernoulli(&mut r, 1 + (seed as usize / 3) % 4),
            1 => random_categorical(&mut r, 1 + (seed as usize / 3) % 2, 2 + (seed as usize / 3) % 3),
            _ => random_gaussian(&mut r, 1 + (seed as usize / 3) % 2),
        };
        let pop = random_population(&model, 40, &mut r);
        if stats_vary(&model, &pop) {
            return (model, pop);
        }
    }
}

fn eval(model: &SearchModel, f: &dyn Fn(&SearchModel) -> f64, x: &[f64]) -> Option<f64> {
    let theta = ExpectationParams::new(model.family(), x.to_vec()).ok()?;
    let m = model.with_params_exact(&theta).ok()?;
    let v = f(&m);
    v.is_finite().then_some(v)
}

/// Damped Newton ascent on `θ ↦ f(model at θ)` with central finite-difference
/// gradient and Hessian; infeasible trial points are rejected by
/// backtracking. Knows nothing about sufficient statistics.
pub fn numerical_argmax(model: &SearchModel, f: &dyn Fn(&SearchModel) -> f64) -> Vec<f64> {
    let mut x = model.params().values;
    let n = x.len();
    let mut fx = eval(model, f, &x).expect("start must be feasible");
    for _ in 0..500 {
        let h: Vec<f64> = x.iter().map(|v| 1e-5 * v.abs().max(1.0)).collect();
        let at = |dx: &[(usize, f64)]| {
            let mut y = x.clone();
            for &(i, d) in dx {
                y[i] += d;
            }
            eval(model, f, &y)
        };
        let mut g = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        let mut fd_ok = true;
        for i in 0..n {
            match (at(&[(i, h[i])]), at(&[(i, -h[i])])) {
                (Some(a), Some(b)) => {
                    g[i] = (a - b) / (2.0 * h[i]);
                    hess[(i, i)] = (a - 2.0 * fx + b) / (h[i] * h[i]);
                }
                _ => fd_ok = false,
            }
            for j in 0..i {
                match (
                    at(&[(i, h[i]), (j, h[j])]),
                    at(&[(i, h[i]), (j, -h[j])]),
                    at(&[(i, -h[i]), (j, h[j])]),
                    at(&[(i, -h[i]), (j, -h[j])]),
                ) {
                    (Some(a), Some(b), Some(c), Some(d)) => {
                        let v = (a - b - c + d) / (4.0 * h[i] * h[j]);
                        hess[(i, j)] = v;
                        hess[(j, i)] = v;
                    }
                    _ => fd_ok = false,
                }
            }
        }
        assert!(fd_ok, "finite differences left the feasible set at {x:?}");
        let dir = match (-&hess).cholesky() {
            Some(c) => c.solve(&g),
            None => g.clone(),
        };
        let slope = g.dot(&dir);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let y: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            if let Some(fy) = eval(model, f, &y) {
                if fy >= fx + 1e-4 * t * slope {
                    let step = y.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    x = y;
                    fx = fy;
                    moved = step > 1e-13;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved || g.amax() < 1e-10 {
            break;
        }
    }
    x
}

/// `Σ w_i log p(z_i|θ)` computed directly from `log_density`.
pub fn weighted_loglik(pop: &Population, m: &SearchModel) -> f64 {
    pop.samples
        .iter()
        .zip(&pop.shaped_w)
        .map(|(z, w)| w * m.log_density(z).unwrap())
        .sum()
}

/// Score `∇_θ log p(z|θ)` written out per family from the densities
/// `Π p^z (1-p)^(1-z)`, `Π p_{j,z_j}` with `p_{j,K-1} = 1 − Σ_{k<K-1} p_{jk}`,
/// and `N(m, S − m mᵀ)`.
pub fn explicit_score(model: &SearchModel, z: &Point) -> Vec<f64> {
    match (model, z) {
        (SearchModel::Bernoulli(m), Point::Bits(b)) => m
            .probs()
            .iter()
            .zip(b)
            .map(|(&p, &bit)| if bit == 1 { 1.0 / p } else { -1.0 / (1.0 - p) })
            .collect(),
        (SearchModel::Categorical(m), Point::Labels(l)) => {
            let k = m.arity();
            let mut out = Vec::new();
            for (row, &label) in m.probs().iter().zip(l) {
                for c in 0..k - 1 {
                    let mut g = 0.0;
                    if label == c {
                        g += 1.0 / row[c];
                    }
                    if label == k - 1 {
                        g -= 1.0 / row[k - 1];
                    }
                    out.push(g);
                }
            }
            out
        }
        (SearchModel::Gaussian(g), Point::Real(x)) => {
            let d = x.len();
            let m = g.mean().clone();
            let p = g.covariance().clone().try_inverse().unwrap();
            let r = DVector::from_column_slice(x) - &m;
            let pr = &p * &r;
            // d log p / dC = ½ (P r rᵀ P − P); C = S − m mᵀ.
            let dc = (&pr * pr.transpose() - &p) * 0.5;
            if g.is_fixed_covariance() {
                return pr.iter().copied().collect();
            }
            // d/dm at fixed S: P r from the quadratic term, −(dC + dCᵀ) m from C.
            let dm = &pr - (&dc + dc.transpose()) * &m;
            let mut out: Vec<f64> = dm.iter().copied().collect();
            for i in 0..d {
                for j in i..d {
                    out.push(if i == j { dc[(i, i)] } else { dc[(i, j)] + dc[(j, i)] });
                }
            }
            out
        }
        _ => panic!("point does not match model"),
    }
}

pub fn standard_normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

/// `max |a − b| / max(max |a|, max |b|)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(0.0, f64::max);
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
