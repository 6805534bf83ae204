use rayon::prelude::*;
use serde::Serialize;

use super::OracleError;
use crate::env_model::{EnvDistribution, Environment, SiteField};
use crate::numeric::CompensatedSum;
use crate::rng::{derive_seed, Role};
use crate::stats::linear_fit;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailKind {
    ExcursionHeight,
    SupV,
}

/// Log-linear fit of an empirical tail `P(X ≥ h) ≈ C e^{−κh}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailEstimate {
    pub kind: TailKind,
    pub kappa_hat: f64,
    pub kappa_se: f64,
    /// `log Ĉ`.
    pub intercept: f64,
    /// `C_lo e^{−κ̂h} ≤ tail(h) ≤ C_hi e^{−κ̂h}` on the grid.
    pub envelope: (f64, f64),
    pub fit_range: (f64, f64),
    pub grid: Vec<f64>,
    pub tail: Vec<f64>,
    pub sample_size: usize,
    /// Grid placed on multiples of the lattice span.
    pub lattice_snapped: bool,
}

/// Minimum number of samples above the last grid point.
const MIN_TAIL_COUNT: f64 = 50.0;

/// Fit `log P̂(X ≥ h)` against `h` on grid points `h ≥ h_min` whose empirical
/// tail is at least `50/n`. With a known lattice span the grid is the set of
/// lattice points; otherwise twenty evenly spaced points are used.
pub fn tail_fit(
    samples: &[f64],
    kind: TailKind,
    lattice_span: Option<f64>,
    h_min: f64,
) -> Result<TailEstimate, OracleError> {
    let n = samples.len();
    if n == 0 {
        return Err(OracleError::InsufficientTail { points: 0 });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail_at = |h: f64| {
        let tol = 1e-9 * h.abs().max(1.0);
        let idx = sorted.partition_point(|&x| x < h - tol);
        (n - idx) as f64 / n as f64
    };
    let floor = MIN_TAIL_COUNT / n as f64;
    let grid: Vec<f64> = match lattice_span {
        Some(s) => {
            let k0 = (h_min / s - 1e-9).ceil().max(0.0) as i64;
            (k0..).map(|k| k as f64 * s).take_while(|&h| tail_at(h) >= floor).collect()
        }
        None => {
            // Largest h with at least 50 samples at or above it.
            let cutoff = (n as f64 - MIN_TAIL_COUNT).max(0.0) as usize;
            let h_max = sorted[cutoff.min(n - 1)];
            if h_max <= h_min {
                Vec::new()
            } else {
                (0..20).map(|j| h_min + (h_max - h_min) * j as f64 / 19.0).collect()
            }
        }
    };
    if grid.len() < 5 {
        return Err(OracleError::InsufficientTail { points: grid.len() });
    }
    let tail: Vec<f64> = grid.iter().map(|&h| tail_at(h)).collect();
    let logs: Vec<f64> = tail.iter().map(|t| t.ln()).collect();
    let fit = linear_fit(&grid, &logs);
    let kappa_hat = -fit.slope;
    let ratios: Vec<f64> = grid.iter().zip(&tail).map(|(h, t)| t * (kappa_hat * h).exp()).collect();
    let c_lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let c_hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(TailEstimate {
        kind,
        kappa_hat,
        kappa_se: fit.slope_se,
        intercept: fit.intercept,
        envelope: (c_lo, c_hi),
        fit_range: (grid[0], *grid.last().unwrap()),
        grid,
        tail,
        sample_size: n,
        lattice_snapped: lattice_span.is_some(),
    })
}

/// Height of the first excursion above the first weak ladder epoch, in a
/// fresh environment drawn from `env`'s law. Walk lengths are capped at
/// `max_sites`; `None` means the cap was hit.
pub fn first_excursion_height(env: &Environment, max_sites: i64) -> Option<f64> {
    let mut acc = CompensatedSum::new();
    let mut top = 0.0f64;
    for x in 1..=max_sites {
        acc.add(env.log_rho(x));
        let v = acc.value();
        if v <= 0.0 {
            return Some(top);
        }
        top = top.max(v);
    }
    None
}

/// `sup_{x ≥ 0} V(x)`, stopping once `V` has fallen 40 below its running
/// maximum (the chance of climbing back is of order `e^{−40κ}`).
pub fn sup_potential(env: &Environment, max_sites: i64) -> Option<f64> {
    let mut acc = CompensatedSum::new();
    let mut top = 0.0f64;
    for x in 1..=max_sites {
        acc.add(env.log_rho(x));
        let v = acc.value();
        top = top.max(v);
        if v < top - 40.0 {
            return Some(top);
        }
    }
    None
}

/// `n` independent samples of the given kind; sample `k` uses the environment
/// seeded by `derive_seed(seed, FreshEnvironment, k)`.
pub fn sample_tail(dist: &EnvDistribution, kind: TailKind, n: usize, seed: u64) -> Vec<f64> {
    let shared = Arc::new(dist.clone());
    (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let env = Environment::from_shared(shared.clone(), derive_seed(seed, Role::FreshEnvironment as u64, k));
            let out = match kind {
                TailKind::ExcursionHeight => first_excursion_height(&env, 100_000_000),
                TailKind::SupV => sup_potential(&env, 100_000_000),
            };
            out.expect("negative drift ends every excursion")
        })
        .collect()
}
