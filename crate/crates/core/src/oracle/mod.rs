//! Exact computations on small enumerable spaces and the identity checks
//! built on them.
//!
//! Nothing here samples except [`verify_mc_convergence`], which compares the
//! Monte-Carlo M-step against the exact one.

mod checks;
mod exact;
mod fixtures;
mod space;

pub use checks::{
    enumerated_fisher, exact_ngd_step, mc_error_scale, mc_errors, verify_em_monotonicity,
    verify_free_energy_bound, verify_mc_convergence, verify_ngd_correspondence,
    verify_ppm_equivalence, Report, MC_BOUND_FACTOR, NGD_DISCREPANCY_FLOOR,
};
pub use exact::{
    exact_em_update, exact_free_energy, exact_objective, exact_objective_gradient,
    exact_population, exact_tilted, kl_divergence, FreeEnergy, TiltedDistribution,
};
pub use fixtures::{
    default_fixtures, load_fixture_set, parse_fixtures, random_positive_fixture, Fixture,
};
pub use space::{state_at, EnumerableSpace, MAX_STATES};

use crate::error::Result;

/// Knobs of the diagnostics suite. Defaults are the shipped settings.
#[derive(Clone, Debug)]
pub struct DiagnosticsOptions {
    pub tolerance: f64,
    pub random_q: usize,
    pub q_seed: u64,
    pub em_steps: usize,
    pub grid_step: f64,
    pub ngd_scales: Vec<f64>,
    pub mc_n: Vec<usize>,
    pub mc_seeds: Vec<u64>,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            random_q: 20,
            q_seed: 0,
            em_steps: 25,
            grid_step: 1e-3,
            ngd_scales: vec![1.0, 0.5, 0.25, 0.125],
            mc_n: vec![100, 1_000, 10_000, 100_000],
            mc_seeds: (0..20).collect(),
        }
    }
}

/// Runs every applicable check on every fixture:
///
/// * free-energy bound and exact-EM monotonicity on all fixtures;
/// * PPM grid search on Bernoulli fixtures with at most 3 bits;
/// * NGD correspondence on Bernoulli fixtures with `f > 0`;
/// * Monte-Carlo convergence on fixtures flagged `mc`.
pub fn run_diagnostics(fixtures: &[Fixture], opts: &DiagnosticsOptions) -> Result<Vec<Report>> {
    let mut reports = Vec::new();
    for fx in fixtures {
        reports.push(verify_free_energy_bound(
            &fx.model,
            &fx.space,
            &fx.name,
            opts.random_q,
            opts.q_seed,
            opts.tolerance,
        )?);
        reports.push(verify_em_monotonicity(&fx.model, &fx.space, &fx.name, opts.em_steps, 1e-12)?);
        if let Some(dim) = fx.bernoulli_dim() {
            if dim <= 3 {
                reports.push(verify_ppm_equivalence(&fx.model, &fx.space, &fx.name, opts.grid_step)?);
            }
            if fx.objective_positive() && !fx.model.on_boundary() {
                reports.push(verify_ngd_correspondence(&fx.model, &fx.space, &fx.name, &opts.ngd_scales)?);
            }
        }
        if fx.mc {
            reports.push(verify_mc_convergence(
                &fx.model,
                &fx.space,
                &fx.name,
                &opts.mc_n,
                &opts.mc_seeds,
                None,
            )?);
        }
    }
    Ok(reports)
}
