use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::env_model::{rate_function, EnvDistribution, Environment, SiteCache, SiteField};
use crate::numeric::{sum_exp_shifted, CompensatedSum};
use crate::potential::{first_ascent, left_ascent, potential, FirstAscent, PotentialPath};
use crate::rng::{derive_seed, next_unit, Role, StreamKey};
use crate::stats::{BoundCheck, Estimate};
use crate::walker_sim::hitting_time;

/// Largest window tried for one fresh environment.
pub(crate) const FRESH_WINDOW_CAP: i64 = 1 << 24;

pub(crate) fn fresh_env(dist: &Arc<EnvDistribution>, seed: u64, k: u64) -> Environment {
    Environment::from_shared(dist.clone(), derive_seed(seed, Role::FreshEnvironment as u64, k))
}

/// Potential on `[0, x]` grown geometrically until the first ascent of
/// height `h` is inside; `None` past the cap.
pub(crate) fn path_to_first_ascent<F: SiteField + ?Sized>(
    field: &F,
    h: f64,
) -> Option<(PotentialPath, FirstAscent)> {
    let mut right = 256;
    let mut path = potential(field, (0, right)).expect("window contains origin");
    loop {
        if let Ok(asc) = first_ascent(&path, h) {
            return Some((path, asc));
        }
        if right >= FRESH_WINDOW_CAP {
            return None;
        }
        right *= 2;
        path.extend_right(field, right);
    }
}

/// Statistics of `Σ e^{−(V − V(m₁))}` on both sides of `m₁(h)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantSumReport {
    pub h: f64,
    pub n_samples: usize,
    /// Over `[m₁(h), T↑(h)]`.
    pub right: Estimate,
    /// Over `[↑T_h(h), m₁(h))`, on the event `↑T_h(h) ≥ 0`.
    pub left: Estimate,
    /// Frequency of `↑T_h(h) ≥ 0`.
    pub conditioning: Estimate,
    /// Samples dropped because the window cap was reached.
    pub exhausted: usize,
}

impl InvariantSumReport {
    /// Smallest constant bounding both means.
    pub fn c2_calibration(&self) -> f64 {
        let l = if self.left.n > 0 { self.left.mean } else { 0.0 };
        self.right.mean.max(l)
    }
}

fn invariant_sums<F: SiteField + ?Sized>(field: &F, h: f64) -> Option<(f64, Option<f64>)> {
    let (path, _) = path_to_first_ascent(field, h)?;
    invariant_sum_of_path(&path, h)
}

/// Invariant-measure sums of a single path.
pub fn invariant_sum_of_path(path: &PotentialPath, h: f64) -> Option<(f64, Option<f64>)> {
    let asc = first_ascent(path, h).ok()?;
    let vm = path.v(asc.m1);
    let neg: Vec<f64> = path.slice(asc.m1, asc.t_up).iter().map(|v| -v).collect();
    let right = sum_exp_shifted(&neg, -vm);
    let left = left_ascent(path, h, h).ok().flatten().filter(|&lo| lo >= 0).map(|lo| {
        let neg: Vec<f64> = path.slice(lo, asc.m1 - 1).iter().map(|v| -v).collect();
        sum_exp_shifted(&neg, -vm)
    });
    Some((right, left))
}

/// Means of the invariant-measure sums over `n_samples` fresh environments.
pub fn invariant_sum_check(dist: &EnvDistribution, h: f64, n_samples: usize, seed: u64) -> InvariantSumReport {
    let shared = Arc::new(dist.clone());
    let out: Vec<Option<(f64, Option<f64>)>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|k| invariant_sums(&fresh_env(&shared, seed, k), h))
        .collect();
    let exhausted = out.iter().filter(|o| o.is_none()).count();
    let done: Vec<&(f64, Option<f64>)> = out.iter().flatten().collect();
    let rights: Vec<f64> = done.iter().map(|s| s.0).collect();
    let lefts: Vec<f64> = done.iter().filter_map(|s| s.1).collect();
    InvariantSumReport {
        h,
        n_samples,
        right: Estimate::from_samples(&rights),
        left: Estimate::from_samples(&lefts),
        conditioning: Estimate::proportion(lefts.len(), done.len()),
        exhausted,
    }
}

/// Mean time for the walk reflected at 0 to reach `T↑(h) − 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AscentTimePoint {
    pub h: f64,
    pub time: Estimate,
    /// `mean / e^h`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AscentTimeCalibration {
    pub points: Vec<AscentTimePoint>,
    /// `max_h mean/e^h`.
    pub c0_hat: f64,
    /// The reflected walk never stood on −1.
    pub reflection_ok: bool,
}

struct ReflectAtZero<'a, F: ?Sized>(&'a F);

impl<F: SiteField + ?Sized> SiteField for ReflectAtZero<'_, F> {
    fn omega(&self, x: i64) -> f64 {
        if x == 0 {
            1.0
        } else {
            self.0.omega(x)
        }
    }
}

/// Annealed `E[τ(T↑(h) − 1)]` for the walk reflected at 0, one fresh
/// environment per run, reported against `e^h`.
pub fn first_ascent_time_calibration(
    dist: &EnvDistribution,
    hs: &[f64],
    n_runs: usize,
    seed: u64,
) -> AscentTimeCalibration {
    let shared = Arc::new(dist.clone());
    let mut points = Vec::new();
    let mut reflection_ok = true;
    for (hi, &h) in hs.iter().enumerate() {
        let runs: Vec<(f64, bool)> = (0..n_runs as u64)
            .into_par_iter()
            .map(|r| {
                let env = fresh_env(&shared, derive_seed(seed, hi as u64, 0), r);
                let (_, asc) = path_to_first_ascent(&env, h).expect("first ascent within window cap");
                let target = asc.t_up - 1;
                let refl = ReflectAtZero(&env);
                let mut cache = SiteCache::new(&refl, 0);
                let mut rng = StreamKey::new(seed, Role::Replicate, r).with_phase(hi as u64).rng();
                let (mut x, mut t, mut ok) = (0i64, 0u64, true);
                while x != target {
                    let w = cache.omega(x);
                    x += if next_unit(&mut rng) < w { 1 } else { -1 };
                    ok &= x >= 0;
                    t += 1;
                }
                (t as f64, ok)
            })
            .collect();
        reflection_ok &= runs.iter().all(|r| r.1);
        let times: Vec<f64> = runs.iter().map(|r| r.0).collect();
        let time = Estimate::from_samples(&times);
        points.push(AscentTimePoint { h, time, ratio: time.mean / h.exp() });
    }
    let c0_hat = points.iter().map(|p| p.ratio).fold(f64::NEG_INFINITY, f64::max);
    AscentTimeCalibration { points, c0_hat, reflection_ok }
}

/// One grid point of the large-deviation check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LdPoint {
    pub k: u64,
    pub y: f64,
    pub rate: f64,
    pub check: BoundCheck,
}

/// `P[V(k) ≥ ky] + 4·SE ≤ e^{−kI(y)}` on a grid, `y` clipped to `y ≥ 0`.
pub fn ld_bound_check(dist: &EnvDistribution, ks: &[u64], ys: &[f64], n_samples: usize, seed: u64) -> Vec<LdPoint> {
    let shared = Arc::new(dist.clone());
    let k_max = ks.iter().copied().max().unwrap_or(0);
    // V(k) for every k in the grid, per sample.
    let values: Vec<Vec<f64>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|s| {
            let env = fresh_env(&shared, seed, s);
            let mut acc = CompensatedSum::new();
            let mut out = Vec::with_capacity(ks.len());
            for x in 1..=k_max as i64 {
                acc.add(env.log_rho(x));
                if ks.contains(&(x as u64)) {
                    out.push(acc.value());
                }
            }
            out
        })
        .collect();
    let mut sorted_ks = ks.to_vec();
    sorted_ks.sort_unstable();
    sorted_ks.dedup();
    let mut points = Vec::new();
    for &k in ks {
        let col = sorted_ks.iter().position(|&q| q == k).unwrap();
        for &y in ys {
            let y = y.max(0.0);
            let level = k as f64 * y;
            let hits = values.iter().filter(|v| v[col] >= level - 1e-12 * level.abs().max(1.0)).count();
            let rate = rate_function(dist, y);
            let bound = (-(k as f64) * rate).exp();
            points.push(LdPoint { k, y, rate, check: BoundCheck::strict_upper(Estimate::proportion(hits, n_samples), bound, 4.0) });
        }
    }
    points
}

/// Mean of `τ(target)` started at 0 over fresh environments, for cheap
/// sanity checks of the hitting-time machinery.
pub fn annealed_hitting_time(dist: &EnvDistribution, target: i64, n_runs: usize, cap: u64, seed: u64) -> Estimate {
    let shared = Arc::new(dist.clone());
    let times: Vec<f64> = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| {
            let env = fresh_env(&shared, seed, r);
            let mut rng = StreamKey::new(seed, Role::Replicate, r).rng();
            hitting_time(&env, 0, target, cap, &mut rng).map_or(f64::NAN, |t| t as f64)
        })
        .collect();
    Estimate::from_samples(&times)
}
