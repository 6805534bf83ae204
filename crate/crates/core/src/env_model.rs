//! Site-probability laws, their analytic moments, and realized environments.
//!
//! A law is a finite list of `(ω, mass)` pairs. Everything derived from it
//! (mean of `log ρ₀`, the exponent κ solving `E ρ₀^κ = 1`, the log-MGF of
//! `log ρ₀` and its Legendre transform) is an exact finite sum.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::numeric::{compensated_sum, log_sum_exp};
use crate::rng::{hash_words, unit_f64, DOMAIN_ENV};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("no positive root of E(rho^t) = 1: {0}")]
    NoKappa(String),
}

/// One atom of the law of `ω₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportPoint {
    pub omega: f64,
    pub mass: f64,
}

impl SupportPoint {
    #[inline]
    pub fn log_rho(&self) -> f64 {
        ((1.0 - self.omega) / self.omega).ln()
    }
}

/// Finite-support law of a single site probability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvDistribution {
    support: Vec<SupportPoint>,
    epsilon0: f64,
    lattice_span: Option<f64>,
    #[serde(skip)]
    cdf: Vec<f64>,
}

const MASS_TOL: f64 = 1e-12;

impl EnvDistribution {
    /// Build from `(ω, mass)` pairs. Masses must be nonnegative and sum to one,
    /// values must lie in (0, 1) and `epsilon0` in (0, 1/2). Whether the values
    /// actually respect `epsilon0` is reported by [`check_assumptions`].
    pub fn new(pairs: &[(f64, f64)], epsilon0: f64) -> Result<Self, EnvError> {
        if pairs.is_empty() {
            return Err(EnvError::InvalidDistribution("empty support".into()));
        }
        if !(epsilon0 > 0.0 && epsilon0 < 0.5) {
            return Err(EnvError::InvalidDistribution(format!(
                "epsilon0 = {epsilon0} is outside (0, 1/2)"
            )));
        }
        let mut support = Vec::with_capacity(pairs.len());
        for &(omega, mass) in pairs {
            if !(omega > 0.0 && omega < 1.0) {
                return Err(EnvError::InvalidDistribution(format!(
                    "support value {omega} is outside (0, 1)"
                )));
            }
            if !(mass >= 0.0) || !mass.is_finite() {
                return Err(EnvError::InvalidDistribution(format!("mass {mass} is negative")));
            }
            support.push(SupportPoint { omega, mass });
        }
        let total = compensated_sum(support.iter().map(|p| p.mass));
        if (total - 1.0).abs() > MASS_TOL {
            return Err(EnvError::InvalidDistribution(format!(
                "masses sum to {total}, not 1"
            )));
        }
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = support
            .iter()
            .map(|p| {
                acc += p.mass;
                acc
            })
            .collect();
        let last_atom = support.iter().rposition(|p| p.mass > 0.0).unwrap_or(0);
        for c in &mut cdf[last_atom..] {
            *c = f64::INFINITY;
        }
        let lattice_span = detect_lattice_span(&support);
        Ok(Self {
            support,
            epsilon0,
            lattice_span,
            cdf,
        })
    }

    /// `ω ∈ {p_low, p_high}` with `P(ω = p_low) = q`.
    pub fn two_point(p_low: f64, p_high: f64, q: f64, epsilon0: f64) -> Result<Self, EnvError> {
        if !(0.0..=1.0).contains(&q) {
            return Err(EnvError::InvalidDistribution(format!("q = {q} is not a probability")));
        }
        Self::new(&[(p_low, q), (p_high, 1.0 - q)], epsilon0)
    }

    /// Deterministic environment `ω_x ≡ omega`.
    pub fn constant(omega: f64, epsilon0: f64) -> Result<Self, EnvError> {
        Self::new(&[(omega, 1.0)], epsilon0)
    }

    pub fn support(&self) -> &[SupportPoint] {
        &self.support
    }

    pub fn epsilon0(&self) -> f64 {
        self.epsilon0
    }

    /// Largest `a > 0` with `log ρ₀ ∈ aℤ` a.s., when the atoms are commensurable.
    pub fn lattice_span(&self) -> Option<f64> {
        self.lattice_span
    }

    fn atoms(&self) -> impl Iterator<Item = &SupportPoint> {
        self.support.iter().filter(|p| p.mass > 0.0)
    }

    pub fn mean_log_rho(&self) -> f64 {
        compensated_sum(self.atoms().map(|p| p.mass * p.log_rho()))
    }

    /// `E ρ₀^t`.
    pub fn moment(&self, t: f64) -> f64 {
        log_mgf(self, t).exp()
    }

    pub fn max_log_rho(&self) -> f64 {
        self.atoms().map(|p| p.log_rho()).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_log_rho(&self) -> f64 {
        self.atoms().map(|p| p.log_rho()).fold(f64::INFINITY, f64::min)
    }

    /// Inverse CDF at `u ∈ [0, 1)`.
    #[inline]
    pub fn quantile(&self, u: f64) -> f64 {
        // Zero-mass atoms share a CDF value with their predecessor and are
        // skipped by `partition_point`.
        let idx = self.cdf.partition_point(|&c| c <= u);
        self.support[idx].omega
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn detect_lattice_span(support: &[SupportPoint]) -> Option<f64> {
    let mags: Vec<f64> = support
        .iter()
        .filter(|p| p.mass > 0.0)
        .map(|p| p.log_rho().abs())
        .filter(|&l| l > 1e-14)
        .collect();
    let base = mags.iter().copied().fold(f64::INFINITY, f64::min);
    if !base.is_finite() {
        return None;
    }
    const MAX_DEN: u64 = 10_000;
    let mut dens = Vec::with_capacity(mags.len());
    for &m in &mags {
        let r = m / base;
        let q = (1..=MAX_DEN).find(|&q| {
            let x = r * q as f64;
            (x - x.round()).abs() < 1e-9 * q as f64
        })?;
        dens.push(q);
    }
    let lcm = dens.iter().fold(1u64, |l, &q| l / gcd(l, q) * q);
    let nums: Vec<u64> = mags
        .iter()
        .map(|&m| (m / base * lcm as f64).round() as u64)
        .collect();
    let g = nums.iter().fold(0u64, |g, &n| gcd(g, n));
    Some(base * g as f64 / lcm as f64)
}

/// Moments tied to the walk's hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvMoments {
    pub mean_log_rho: f64,
    pub kappa: Option<f64>,
    pub kappa0: Option<f64>,
    pub v0: Option<f64>,
}

/// Which hypotheses hold for a law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub elliptic: bool,
    pub transient_right: bool,
    pub kappa_in_unit_interval: bool,
    pub moments: EnvMoments,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.elliptic && self.transient_right && self.kappa_in_unit_interval
    }
}

/// Default solver tolerance on `|E ρ^κ − 1|`.
pub const KAPPA_TOL: f64 = 1e-12;

pub fn check_assumptions(dist: &EnvDistribution) -> AssumptionReport {
    let eps = dist.epsilon0();
    let elliptic = dist
        .atoms()
        .all(|p| p.omega >= eps && p.omega <= 1.0 - eps);
    let mean_log_rho = dist.mean_log_rho();
    let transient_right = mean_log_rho < 0.0;
    let kappa = solve_kappa(dist, KAPPA_TOL).ok();
    let (kappa0, v0) = match kappa {
        Some(k) => {
            let (k0, v) = sub_exponent(dist, k.kappa);
            (Some(k0), Some(v))
        }
        None => (None, None),
    };
    AssumptionReport {
        elliptic,
        transient_right,
        kappa_in_unit_interval: kappa.is_some_and(|k| k.in_unit_interval),
        moments: EnvMoments {
            mean_log_rho,
            kappa: kappa.map(|k| k.kappa),
            kappa0,
            v0,
        },
    }
}

/// Root of `t ↦ E ρ₀^t − 1` on `(0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaSolution {
    pub kappa: f64,
    /// Initial bracket `(0, t⁺)` with `E ρ^{t⁺} > 1`.
    pub bracket: (f64, f64),
    pub in_unit_interval: bool,
}

pub fn solve_kappa(dist: &EnvDistribution, tol: f64) -> Result<KappaSolution, EnvError> {
    let mean = dist.mean_log_rho();
    if !(mean < 0.0) {
        return Err(EnvError::NoKappa(format!("E log rho = {mean} is not negative")));
    }
    if !(dist.max_log_rho() > 0.0) {
        return Err(EnvError::NoKappa(
            "rho < 1 almost surely, so E rho^t < 1 for all t > 0".into(),
        ));
    }
    let mut hi = 1.0;
    while log_mgf(dist, hi) <= 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(EnvError::NoKappa("bracket search diverged".into()));
        }
    }
    let bracket = (0.0, hi);
    // Λ(0) = 0 and Λ is strictly convex with Λ'(0) < 0, so Λ < 0 exactly on (0, κ).
    let mut lo = 0.0;
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if log_mgf(dist, mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let kappa = if log_mgf(dist, lo).abs() <= log_mgf(dist, hi).abs() {
        lo
    } else {
        hi
    };
    let residual = (dist.moment(kappa) - 1.0).abs();
    if residual > tol {
        return Err(EnvError::NoKappa(format!(
            "residual {residual} above tolerance {tol}"
        )));
    }
    Ok(KappaSolution {
        kappa,
        bracket,
        in_unit_interval: kappa < 1.0,
    })
}

/// `κ₀ = κ/2` and `v₀ = E ρ₀^{κ₀}`.
pub fn sub_exponent(dist: &EnvDistribution, kappa: f64) -> (f64, f64) {
    let kappa0 = 0.5 * kappa;
    (kappa0, dist.moment(kappa0))
}

/// `Λ(t) = log E exp(t · log ρ₀)`.
pub fn log_mgf(dist: &EnvDistribution, t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let terms: Vec<f64> = dist
        .atoms()
        .map(|p| p.mass.ln() + t * p.log_rho())
        .collect();
    log_sum_exp(&terms)
}

/// `Λ'(t)`, the mean of `log ρ₀` under the tilted law.
pub fn log_mgf_derivative(dist: &EnvDistribution, t: f64) -> f64 {
    let terms: Vec<(f64, f64)> = dist
        .atoms()
        .map(|p| (p.mass.ln() + t * p.log_rho(), p.log_rho()))
        .collect();
    let m = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let num = compensated_sum(terms.iter().map(|&(e, l)| l * (e - m).exp()));
    let den = compensated_sum(terms.iter().map(|&(e, _)| (e - m).exp()));
    num / den
}

/// Cramér rate function `I(y) = sup_t (t·y − Λ(t))` of `log ρ₀`.
pub fn rate_function(dist: &EnvDistribution, y: f64) -> f64 {
    let l_max = dist.max_log_rho();
    let l_min = dist.min_log_rho();
    let edge_tol = 1e-12 * l_max.abs().max(l_min.abs()).max(1.0);
    let edge_mass = |target: f64| -> f64 {
        compensated_sum(
            dist.atoms()
                .filter(|p| (p.log_rho() - target).abs() <= edge_tol)
                .map(|p| p.mass),
        )
    };
    if y > l_max + edge_tol || y < l_min - edge_tol {
        return f64::INFINITY;
    }
    if (y - l_max).abs() <= edge_tol {
        return -edge_mass(l_max).ln();
    }
    if (y - l_min).abs() <= edge_tol {
        return -edge_mass(l_min).ln();
    }
    let mean = dist.mean_log_rho();
    if y == mean {
        return 0.0;
    }
    let spread = l_max - l_min;
    let sign = if y > mean { 1.0 } else { -1.0 };
    let mut t_hi = 64.0 / spread;
    while sign * (log_mgf_derivative(dist, sign * t_hi) - y) <= 0.0 {
        t_hi *= 2.0;
    }
    let objective = |t: f64| t * y - log_mgf(dist, t);
    let (mut lo, mut hi) = if sign > 0.0 { (0.0, t_hi) } else { (-t_hi, 0.0) };
    for _ in 0..400 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if objective(m1) < objective(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
        if hi - lo < 1e-15 * (1.0 + lo.abs()) {
            break;
        }
    }
    objective(0.5 * (lo + hi)).max(0.0)
}

/// Read access to a field of site probabilities `ω_x`.
pub trait SiteField: Sync {
    fn omega(&self, x: i64) -> f64;

    #[inline]
    fn log_rho(&self, x: i64) -> f64 {
        let w = self.omega(x);
        ((1.0 - w) / w).ln()
    }
}

impl<F: SiteField + ?Sized> SiteField for &F {
    #[inline]
    fn omega(&self, x: i64) -> f64 {
        (**self).omega(x)
    }
}

/// Realized environment: `ω_x` is a pure function of `(master_seed, x)`.
#[derive(Debug, Clone)]
pub struct Environment {
    master_seed: u64,
    dist: Arc<EnvDistribution>,
}

pub fn sample_env(dist: &EnvDistribution, master_seed: u64) -> Environment {
    Environment {
        master_seed,
        dist: Arc::new(dist.clone()),
    }
}

impl Environment {
    pub fn from_shared(dist: Arc<EnvDistribution>, master_seed: u64) -> Self {
        Self { master_seed, dist }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn dist(&self) -> &EnvDistribution {
        &self.dist
    }

    #[inline]
    pub fn omega_at(&self, x: i64) -> f64 {
        let u = unit_f64(hash_words(&[DOMAIN_ENV, self.master_seed, x as u64]));
        self.dist.quantile(u)
    }
}

impl SiteField for Environment {
    #[inline]
    fn omega(&self, x: i64) -> f64 {
        self.omega_at(x)
    }
}

/// Explicit table of `ω` on `[offset, offset + len)`, with a fill value outside.
/// Mostly useful for hand-built toy potentials.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedField {
    pub offset: i64,
    pub values: Vec<f64>,
    pub fill: f64,
}

impl SiteField for TabulatedField {
    fn omega(&self, x: i64) -> f64 {
        let i = x - self.offset;
        if i >= 0 && (i as usize) < self.values.len() {
            self.values[i as usize]
        } else {
            self.fill
        }
    }
}

/// The environment seen from the other side: `ω'_x = 1 − ω_{1−x}`, so that
/// the potential of the mirror satisfies `V'(x) = V(−x)`.
#[derive(Debug, Clone)]
pub struct MirroredField<F>(pub F);

impl<F: SiteField> SiteField for MirroredField<F> {
    fn omega(&self, x: i64) -> f64 {
        1.0 - self.0.omega(1 - x)
    }
}

/// Growable per-worker cache of `(ω_x, log ρ_x)` around the sites visited so far.
pub struct SiteCache<'a, F: SiteField + ?Sized> {
    field: &'a F,
    lo: i64,
    omega: Vec<f64>,
}

impl<'a, F: SiteField + ?Sized> SiteCache<'a, F> {
    pub fn new(field: &'a F, center: i64) -> Self {
        let lo = center - 512;
        let omega = (lo..center + 512).map(|x| field.omega(x)).collect();
        Self { field, lo, omega }
    }

    #[inline]
    pub fn omega(&mut self, x: i64) -> f64 {
        let i = x - self.lo;
        if i >= 0 && (i as usize) < self.omega.len() {
            return self.omega[i as usize];
        }
        self.grow(x);
        self.omega[(x - self.lo) as usize]
    }

    #[cold]
    fn grow(&mut self, x: i64) {
        let len = self.omega.len() as i64;
        let hi = self.lo + len;
        if x < self.lo {
            let new_lo = x.min(self.lo - len);
            let mut fresh: Vec<f64> = (new_lo..self.lo).map(|y| self.field.omega(y)).collect();
            fresh.extend_from_slice(&self.omega);
            self.omega = fresh;
            self.lo = new_lo;
        } else {
            let new_hi = (x + 1).max(hi + len);
            self.omega.extend((hi..new_hi).map(|y| self.field.omega(y)));
        }
    }

    pub fn window(&self) -> (i64, i64) {
        (self.lo, self.lo + self.omega.len() as i64 - 1)
    }
}
