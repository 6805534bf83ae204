use rayon::prelude::*;
use serde::Serialize;

use crate::env_model::SiteField;
use crate::numeric::{sum_exp_shifted, CompensatedSum};
use crate::rng::{Role, StreamKey};
use crate::stats::{BoundCheck, Estimate};
use crate::walker_sim::{exit_time, hitting_time};

/// `V(x) − V(from)` for `x` in `[from, to]`.
pub(crate) fn local_potential<F: SiteField + ?Sized>(field: &F, from: i64, to: i64) -> Vec<f64> {
    let mut acc = CompensatedSum::new();
    let mut out = Vec::with_capacity((to - from + 1).max(0) as usize);
    out.push(0.0);
    for x in from + 1..=to {
        acc.add(field.log_rho(x));
        out.push(acc.value());
    }
    out
}

/// `P^b[τ(c) < τ(a)] = Σ_{a}^{b−1} e^{V} / Σ_{a}^{c−1} e^{V}`, evaluated with
/// the maximum of `V` factored out and terms summed in ascending order.
pub fn exit_prob_exact<F: SiteField + ?Sized>(field: &F, a: i64, b: i64, c: i64) -> f64 {
    assert!(a < b && b < c, "need a < b < c, got ({a}, {b}, {c})");
    let v = local_potential(field, a, c - 1);
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let num = sum_exp_shifted(&v[..(b - a) as usize], m);
    let den = sum_exp_shifted(&v, m);
    num / den
}

/// Thomas algorithm for `−lᵢ x_{i−1} + x_i − uᵢ x_{i+1} = rᵢ`. Every pivot
/// stays at least `min uᵢ` when `lᵢ + uᵢ ≤ 1`, so no pivoting is needed.
pub(crate) fn solve_birth_death(lower: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut prev_c = 0.0;
    let mut prev_d = 0.0;
    for i in 0..n {
        let pivot = 1.0 - lower[i] * prev_c;
        assert!(pivot > 0.0, "singular birth-death system at row {i}");
        cp[i] = upper[i] / pivot;
        dp[i] = (rhs[i] + lower[i] * prev_d) / pivot;
        prev_c = cp[i];
        prev_d = dp[i];
    }
    let mut x = vec![0.0; n];
    let mut next = 0.0;
    for i in (0..n).rev() {
        x[i] = dp[i] + cp[i] * next;
        next = x[i];
    }
    x
}

/// Solve `u(x) = ω_x u(x+1) + (1−ω_x) u(x−1)` with `u(a) = 0`, `u(c) = 1`.
pub fn exit_prob_bruteforce<F: SiteField + ?Sized>(field: &F, a: i64, b: i64, c: i64) -> f64 {
    assert!(a < b && b < c, "need a < b < c, got ({a}, {b}, {c})");
    let sites: Vec<i64> = (a + 1..c).collect();
    let upper: Vec<f64> = sites.iter().map(|&x| field.omega(x)).collect();
    let lower: Vec<f64> = upper.iter().map(|w| 1.0 - w).collect();
    let mut rhs = vec![0.0; sites.len()];
    *rhs.last_mut().unwrap() = *upper.last().unwrap();
    let mut up = upper;
    *up.last_mut().unwrap() = 0.0;
    let u = solve_birth_death(&lower, &up, &rhs);
    u[(b - a - 1) as usize]
}

/// Exact `E^b[τ(a) ∧ τ(c)]` with the two comparison bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitTimeReport {
    pub mean: f64,
    /// Comparison with the walk reflected at `a`.
    pub bound_reflect_left: f64,
    /// Comparison with the walk reflected at `c`.
    pub bound_reflect_right: f64,
}

impl ExitTimeReport {
    pub fn within_bounds(&self) -> bool {
        self.mean <= self.bound_reflect_left && self.mean <= self.bound_reflect_right
    }
}

/// Solve `m(x) = 1 + ω_x m(x+1) + (1−ω_x) m(x−1)`, `m(a) = m(c) = 0`, and
/// evaluate `ε₀⁻¹(c−a)² exp(max …)` for both comparison chains.
pub fn expected_exit_time<F: SiteField + ?Sized>(
    field: &F,
    a: i64,
    b: i64,
    c: i64,
    epsilon0: f64,
) -> ExitTimeReport {
    assert!(a < b && b < c, "need a < b < c, got ({a}, {b}, {c})");
    let sites: Vec<i64> = (a + 1..c).collect();
    let mut upper: Vec<f64> = sites.iter().map(|&x| field.omega(x)).collect();
    let mut lower: Vec<f64> = upper.iter().map(|w| 1.0 - w).collect();
    lower[0] = 0.0;
    *upper.last_mut().unwrap() = 0.0;
    let m = solve_birth_death(&lower, &upper, &vec![1.0; sites.len()]);
    let mean = m[(b - a - 1) as usize];

    let v = local_potential(field, a, c - 1);
    let idx = |x: i64| (x - a) as usize;
    // max over a ≤ ℓ ≤ k ≤ c−1, k ≥ b of V(k) − V(ℓ)
    let mut run_min = f64::INFINITY;
    let mut rise: f64 = f64::NEG_INFINITY;
    for x in a..c {
        run_min = run_min.min(v[idx(x)]);
        if x >= b {
            rise = rise.max(v[idx(x)] - run_min);
        }
    }
    // max over a ≤ ℓ ≤ k ≤ c−1, ℓ ≤ b−1 of V(ℓ) − V(k)
    let mut suf_min = f64::INFINITY;
    let mut fall: f64 = f64::NEG_INFINITY;
    for x in (a..c).rev() {
        suf_min = suf_min.min(v[idx(x)]);
        if x < b {
            fall = fall.max(v[idx(x)] - suf_min);
        }
    }
    let pre = ((c - a) as f64).powi(2) / epsilon0;
    ExitTimeReport { mean, bound_reflect_left: pre * rise.exp(), bound_reflect_right: pre * fall.exp() }
}

/// `E^start[τ(target)]` for `start < target`, with the walk reflected at
/// `floor` (`ω̂_floor = 1`). Taking `floor` far to the left approximates the
/// free walk when the potential rises towards `−∞`.
pub fn expected_hitting_time<F: SiteField + ?Sized>(field: &F, start: i64, target: i64, floor: i64) -> f64 {
    assert!(floor <= start && start < target);
    let sites: Vec<i64> = (floor..target).collect();
    let mut upper: Vec<f64> = sites.iter().map(|&x| field.omega(x)).collect();
    let mut lower: Vec<f64> = upper.iter().map(|w| 1.0 - w).collect();
    upper[0] = 1.0;
    lower[0] = 0.0;
    *upper.last_mut().unwrap() = 0.0;
    let m = solve_birth_death(&lower, &upper, &vec![1.0; sites.len()]);
    m[(start - floor) as usize]
}

/// Monte Carlo `P^b[τ(c) < τ(a)]`; run `r` uses `(seed, Replicate, r)`.
pub fn exit_prob_mc<F: SiteField + ?Sized>(field: &F, a: i64, b: i64, c: i64, n_runs: usize, seed: u64) -> Estimate {
    let hits = (0..n_runs as u64)
        .into_par_iter()
        .filter(|&r| {
            let mut rng = StreamKey::new(seed, Role::Replicate, r).rng();
            matches!(exit_time(field, b, a, c, u64::MAX, &mut rng), Some((_, x)) if x == c)
        })
        .count();
    Estimate::proportion(hits, n_runs)
}

/// Monte Carlo `E^b[τ(a) ∧ τ(c)]`.
pub fn exit_time_mc<F: SiteField + ?Sized>(field: &F, a: i64, b: i64, c: i64, n_runs: usize, seed: u64) -> Estimate {
    let times: Vec<f64> = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = StreamKey::new(seed, Role::Replicate, r).rng();
            exit_time(field, b, a, c, u64::MAX, &mut rng).expect("finite exit").0 as f64
        })
        .collect();
    Estimate::from_samples(&times)
}

/// Monte Carlo `E^start[τ(target)]`.
pub fn hitting_time_mc<F: SiteField + ?Sized>(
    field: &F,
    start: i64,
    target: i64,
    n_runs: usize,
    cap: u64,
    seed: u64,
) -> Estimate {
    let times: Vec<f64> = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = StreamKey::new(seed, Role::Replicate, r).rng();
            hitting_time(field, start, target, cap, &mut rng).map_or(f64::NAN, |t| t as f64)
        })
        .collect();
    Estimate::from_samples(&times)
}

/// `P^b[τ(target) < k] ≤ k·exp(min V − V(edge))` for a target on either side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GolosovReport {
    pub bound: f64,
    pub check: BoundCheck,
}

/// Bound on reaching `target` within fewer than `k` steps, from `b`:
/// to the right, `k·exp(min_{[b,c−1]} V − V(c−1))`; to the left,
/// `k·exp(min_{[a,b−1]} V − V(a))`. The left side is estimated with `n_runs`
/// walks and compared with bound + 4·SE.
pub fn golosov_bounds<F: SiteField + ?Sized>(
    field: &F,
    b: i64,
    target: i64,
    k: u64,
    n_runs: usize,
    seed: u64,
) -> GolosovReport {
    assert!(k >= 1 && target != b);
    let (lo, hi) = if target > b { (b, target - 1) } else { (target, b - 1) };
    let v = local_potential(field, lo, hi);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let edge = if target > b { v[v.len() - 1] } else { v[0] };
    let bound = k as f64 * (min - edge).exp();
    let hits = (0..n_runs as u64)
        .into_par_iter()
        .filter(|&r| {
            let mut rng = StreamKey::new(seed, Role::Replicate, r).rng();
            k > 1 && hitting_time(field, b, target, k - 1, &mut rng).is_some()
        })
        .count();
    let est = Estimate::proportion(hits, n_runs);
    GolosovReport { bound, check: BoundCheck::upper(est, bound, 4.0) }
}
