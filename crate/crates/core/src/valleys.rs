//! Excursion-indexed valleys of the potential and the very-deep-valley index.
//!
//! Valley `i` sits at the first weak-ladder excursion after valley `i − 1`
//! whose height reaches `fᵢ`; its walls are cut at the levels `fᵢ/2` and
//! `fᵢ + zᵢ` above the bottom, capped by the neighbouring ladder epochs.

use serde::Serialize;
use thiserror::Error;

use crate::env_model::{check_assumptions, EnvDistribution, SiteField};
use crate::numeric::sum_exp_shifted;
use crate::potential::{first_ascent, ladder, potential, LadderDecomposition, PotentialPath};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValleyError {
    #[error("invalid valley parameters: {0}")]
    InvalidParameters(String),
    #[error("window exhausted while locating valley {i}")]
    WindowExhausted { i: usize },
}

/// Parameters of the valley construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValleySchedule {
    pub epsilon: f64,
    pub kappa: f64,
    pub kappa0: f64,
    pub v0: f64,
    pub c0: f64,
    pub c2: f64,
    pub c4: f64,
}

impl ValleySchedule {
    /// Validates `ε ∈ (0, (1−κ)/(2κ))`, `C₀ ≥ 1`, `C₂ > 0` and
    /// `C₄ > 2(κ+κ₀)/|log v₀|`. Without an explicit `C₄`, 1.1 times the bound is used.
    pub fn new(
        epsilon: f64,
        kappa: f64,
        kappa0: f64,
        v0: f64,
        c0: f64,
        c2: f64,
        c4: Option<f64>,
    ) -> Result<Self, ValleyError> {
        let bad = |m: String| Err(ValleyError::InvalidParameters(m));
        if !(kappa > 0.0 && kappa < 1.0) {
            return bad(format!("kappa = {kappa} must lie in (0, 1)"));
        }
        let eps_max = (1.0 - kappa) / (2.0 * kappa);
        if !(epsilon > 0.0 && epsilon < eps_max) {
            return bad(format!("epsilon = {epsilon} must lie in (0, {eps_max})"));
        }
        if !(kappa0 > 0.0 && kappa0 < kappa && v0 > 0.0 && v0 < 1.0) {
            return bad(format!("need 0 < kappa0 < kappa and 0 < v0 < 1, got {kappa0}, {v0}"));
        }
        if !(c0 >= 1.0) {
            return bad(format!("C0 = {c0} must be at least 1"));
        }
        if !(c2 > 0.0) {
            return bad(format!("C2 = {c2} must be positive"));
        }
        let c4_min = 2.0 * (kappa + kappa0) / v0.ln().abs();
        let c4 = c4.unwrap_or(1.1 * c4_min);
        if !(c4 > c4_min) {
            return bad(format!("C4 = {c4} must exceed {c4_min}"));
        }
        Ok(Self { epsilon, kappa, kappa0, v0, c0, c2, c4 })
    }

    /// Derive κ, κ₀, v₀ from a law satisfying the hypotheses.
    pub fn for_distribution(
        dist: &EnvDistribution,
        epsilon: f64,
        c0: f64,
        c2: f64,
        c4: Option<f64>,
    ) -> Result<Self, ValleyError> {
        let m = check_assumptions(dist).moments;
        match (m.kappa, m.kappa0, m.v0) {
            (Some(k), Some(k0), Some(v0)) => Self::new(epsilon, k, k0, v0, c0, c2, c4),
            _ => Err(ValleyError::InvalidParameters("law has no exponent kappa".into())),
        }
    }

    pub fn c4_lower_bound(&self) -> f64 {
        2.0 * (self.kappa + self.kappa0) / self.v0.ln().abs()
    }

    /// Exponent `(1+ε)/(1/κ − 1 − 3ε/2)` in the lower bound on `i(n)`.
    pub fn index_growth_exponent(&self) -> f64 {
        (1.0 + self.epsilon) / (1.0 / self.kappa - 1.0 - 1.5 * self.epsilon)
    }
}

/// `(Nᵢ, fᵢ, zᵢ)` for one index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleEntry {
    /// `Nᵢ` as a real; exact when `n_exact` is present.
    pub n: f64,
    /// `Nᵢ` when `⌊·⌋` is representable below 2⁶³.
    pub n_exact: Option<u64>,
    pub log_n: f64,
    pub f: f64,
    pub z: f64,
}

fn ln_factorial(i: usize) -> f64 {
    (2..=i).map(|j| (j as f64).ln()).sum()
}

pub fn schedule(sched: &ValleySchedule, i: usize) -> ScheduleEntry {
    assert!(i >= 1, "valley indices start at 1");
    let li = (i as f64).ln();
    let eps1 = 1.0 + sched.epsilon;
    let log_raw = sched.c0.ln() + eps1 * li + eps1 / sched.kappa * ln_factorial(i);
    let (n, n_exact, log_n) = if log_raw < 62.0 * std::f64::consts::LN_2 {
        let n = log_raw.exp().floor() as u64;
        (n as f64, Some(n), (n as f64).ln())
    } else {
        // Beyond 2⁶² the floor is below f64 resolution anyway.
        (log_raw.exp(), None, log_raw)
    };
    let f = log_n - sched.c0.ln() - eps1 * li;
    let z = li / sched.kappa;
    ScheduleEntry { n, n_exact, log_n, f, z }
}

/// The six events attached to a valley.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct OmegaFlags {
    /// Left wall reached inside the cap.
    pub o1: bool,
    /// `bᵢ ≤ T↑(fᵢ) − 1 ≤ i·e^{κ fᵢ}`.
    pub o2: bool,
    /// `cᵢ − aᵢ ≤ C₄(fᵢ + zᵢ)`.
    pub o3: bool,
    /// `V > V(bᵢ) + fᵢ/4` on `]aᵢ,cᵢ[ ∖ ]αᵢ,γᵢ[`.
    pub o4: bool,
    /// `Σ_{αᵢ}^{γᵢ} e^{−(V − V(bᵢ))} < 7 C₂`.
    pub o5: bool,
    /// `H_{σ(i)} ≥ fᵢ + zᵢ`.
    pub o6: bool,
}

impl OmegaFlags {
    pub fn as_array(&self) -> [bool; 6] {
        [self.o1, self.o2, self.o3, self.o4, self.o5, self.o6]
    }

    /// `Ω₁ ∩ Ω₂ ∩ Ω₃ ∩ (Ω₄ ∪ Ω₆ᶜ)`.
    pub fn regular(&self) -> bool {
        self.o1 && self.o2 && self.o3 && (self.o4 || !self.o6)
    }

    /// Membership test of the very-deep-valley set.
    pub fn deep(&self) -> bool {
        self.o5 && self.o6
    }
}

/// Anatomy of valley `i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValleyRecord {
    pub i: usize,
    pub sigma: usize,
    pub a: i64,
    pub alpha: i64,
    pub b: i64,
    pub gamma: i64,
    pub c: i64,
    pub beta_minus: Option<i64>,
    pub beta_plus: Option<i64>,
    /// `H_{σ(i)}`.
    pub height: f64,
    /// `e_{σ(i−1)+1}`, the left cap.
    pub lower_cap: i64,
    /// `e_{σ(i)+1} − 1`, the right cap.
    pub upper_cap: i64,
    pub schedule: ScheduleEntry,
    pub flags: OmegaFlags,
}

impl ValleyRecord {
    /// Valleys with `fᵢ ≤ 0` (always `i = 1`) or collapsed walls.
    pub fn is_degenerate(&self) -> bool {
        self.schedule.f <= 0.0 || self.a >= self.b || self.c <= self.b
    }
}

/// Locate valley `i` given valley `i − 1` (or `None` when `i = 1`).
pub fn locate_valley(
    path: &PotentialPath,
    lad: &LadderDecomposition,
    sched: &ValleySchedule,
    i: usize,
    prev: Option<&ValleyRecord>,
) -> Result<ValleyRecord, ValleyError> {
    let sigma_prev: i64 = match prev {
        None => {
            assert_eq!(i, 1, "valley {i} needs its predecessor");
            -1
        }
        Some(p) => {
            assert_eq!(p.i + 1, i, "predecessor of valley {i} has index {}", p.i);
            p.sigma as i64
        }
    };
    let entry = schedule(sched, i);
    let (f, z) = (entry.f, entry.z);
    let start = (sigma_prev + 1) as usize;
    let sigma = (start..lad.weak_heights.len())
        .find(|&k| lad.weak_heights[k] >= f)
        .ok_or(ValleyError::WindowExhausted { i })?;
    let e = &lad.weak_epochs;
    let b = e[sigma];
    let lower_cap = e[start];
    let upper_cap = e[sigma + 1] - 1;
    let vb = path.v(b);
    let deep = vb + f + z;
    let half = vb + f / 2.0;
    let full = vb + f;

    let last_left_at_least = |level: f64, floor: i64| (floor..b).rev().find(|&k| path.v(k) >= level);
    let first_right_at_least = |level: f64, ceil: i64| (b + 1..=ceil).find(|&k| path.v(k) >= level);

    let a = last_left_at_least(deep, lower_cap).unwrap_or(lower_cap);
    let alpha = last_left_at_least(half, lower_cap).unwrap_or(lower_cap);
    // With f > 0 the excursion's own peak qualifies, so the cap never binds.
    let gamma = first_right_at_least(half, upper_cap).unwrap_or(upper_cap);
    let c = first_right_at_least(deep, upper_cap).unwrap_or(upper_cap);
    let beta_minus = last_left_at_least(full, path.x_min());
    let beta_plus = first_right_at_least(full, path.x_max());

    let mut rec = ValleyRecord {
        i,
        sigma,
        a,
        alpha,
        b,
        gamma,
        c,
        beta_minus,
        beta_plus,
        height: lad.weak_heights[sigma],
        lower_cap,
        upper_cap,
        schedule: entry,
        flags: OmegaFlags::default(),
    };
    rec.flags = omega_events(&rec, path, sched);
    Ok(rec)
}

/// Evaluate the six defining predicates of a located valley literally.
pub fn omega_events(rec: &ValleyRecord, path: &PotentialPath, sched: &ValleySchedule) -> OmegaFlags {
    let ScheduleEntry { f, z, .. } = rec.schedule;
    let vb = path.v(rec.b);
    let o1 = (rec.lower_cap..rec.b).any(|k| path.v(k) >= vb + f + z);
    let o2 = match first_ascent(path, f) {
        Ok(asc) => {
            let t = asc.t_up - 1;
            rec.b <= t && (t as f64) <= rec.i as f64 * (sched.kappa * f).exp()
        }
        Err(_) => false,
    };
    let o3 = ((rec.c - rec.a) as f64) <= sched.c4 * (f + z);
    let outer_min = (rec.a + 1..rec.c)
        .filter(|&k| k <= rec.alpha || k >= rec.gamma)
        .map(|k| path.v(k))
        .fold(f64::INFINITY, f64::min);
    let o4 = outer_min > vb + f / 4.0;
    let core = path.slice(rec.alpha, rec.gamma.min(path.x_max()));
    let o5 = sum_exp_shifted(&core.iter().map(|v| -v).collect::<Vec<_>>(), -vb) < 7.0 * sched.c2;
    let o6 = rec.height >= f + z;
    OmegaFlags { o1, o2, o3, o4, o5, o6 }
}

/// Valleys `1..=i_max` (fewer, with `exhausted`, if the window runs out).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValleyCensus {
    pub records: Vec<ValleyRecord>,
    pub exhausted: bool,
}

pub fn locate_valleys(
    path: &PotentialPath,
    lad: &LadderDecomposition,
    sched: &ValleySchedule,
    i_max: usize,
) -> ValleyCensus {
    let mut records: Vec<ValleyRecord> = Vec::with_capacity(i_max);
    for i in 1..=i_max {
        match locate_valley(path, lad, sched, i, records.last()) {
            Ok(r) => records.push(r),
            Err(_) => return ValleyCensus { records, exhausted: true },
        }
    }
    ValleyCensus { records, exhausted: false }
}

/// Path, ladder and valleys `1..=i_max`, growing the right edge of the window
/// geometrically from `initial` up to `max_sites`.
pub fn census_with_growth<F: SiteField + ?Sized>(
    field: &F,
    sched: &ValleySchedule,
    i_max: usize,
    left_extent: i64,
    initial: i64,
    max_sites: i64,
) -> (PotentialPath, ValleyCensus) {
    let mut right = initial.max(16);
    let mut path = potential(field, (-left_extent, right)).expect("window contains origin");
    loop {
        let lad = ladder(&path, usize::MAX);
        let census = locate_valleys(&path, &lad, sched, i_max);
        if !census.exhausted || right >= max_sites {
            return (path, census);
        }
        right = (right * 2).min(max_sites);
        path.extend_right(field, right);
    }
}

/// The very deep valleys `i(0) < i(1) < …`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeepValleyIndex {
    pub indices: Vec<usize>,
    /// One past the last examined index where `Ω₁∩Ω₂∩Ω₃∩(Ω₄∪Ω₆ᶜ)` failed.
    pub i0: usize,
    /// The stream ended before `i(n_max)` was found.
    pub exhausted: bool,
}

/// Select `i(0), …, i(n_max)` from valley records ordered by index.
pub fn deep_valley_indices(
    records: &[ValleyRecord],
    sched: &ValleySchedule,
    n_max: usize,
) -> DeepValleyIndex {
    let i0 = records
        .iter()
        .filter(|r| !r.flags.regular())
        .map(|r| r.i + 1)
        .max()
        .unwrap_or(1);
    let p = sched.index_growth_exponent();
    let members: Vec<usize> = records
        .iter()
        .filter(|r| r.i >= i0 && r.flags.deep())
        .map(|r| r.i)
        .collect();
    let mut indices: Vec<usize> = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let floor = if n == 0 {
            0.0
        } else {
            let prev = indices[n - 1] as f64 + 1.0;
            prev.max(n as f64).max((n as f64).powf(p))
        };
        match members.iter().find(|&&j| j as f64 >= floor) {
            Some(&j) => indices.push(j),
            None => return DeepValleyIndex { indices, i0, exhausted: true },
        }
    }
    DeepValleyIndex { indices, i0, exhausted: false }
}
