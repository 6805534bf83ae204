use rayon::prelude::*;
use serde::Serialize;

use super::reflected::{reflected_invariant_measure, InvariantMeasure, ReflectedEnv};
use super::{same_parity, step_from, WalkerError};
use crate::env_model::{SiteCache, SiteField};
use crate::rng::{next_unit, Role, StreamKey};
use crate::stats::{BoundCheck, Estimate};
use crate::valleys::{ValleyRecord, ValleySchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CouplingOptions {
    pub horizon: u64,
    pub seed: u64,
    pub run_id: u64,
    /// With `false` the reflected walker never borrows the free walker's draws.
    pub coupled: bool,
}

/// One realization of the pair `(S, Ŝ)` with `S₀ = b` and `Ŝ₀ ~ ν̂`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingRun {
    pub a: i64,
    pub c: i64,
    pub coupled: bool,
    pub s_path: Vec<i64>,
    pub s_hat_path: Vec<i64>,
    /// First `k` with `Ŝ_k = S_k`.
    pub tau_meet: Option<u64>,
    /// First `k > tau_meet` with `S_k ∉ [a, c]`.
    pub tau_exit: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ContractReport {
    pub parity: bool,
    pub no_crossing: bool,
    pub glue: bool,
    pub confined: bool,
}

impl ContractReport {
    pub fn all(&self) -> bool {
        self.parity && self.no_crossing && self.glue && self.confined
    }
}

impl CouplingRun {
    /// Re-check the pathwise guarantees of the coupling from the stored paths.
    pub fn check_contracts(&self) -> ContractReport {
        let diffs: Vec<i64> = self.s_hat_path.iter().zip(&self.s_path).map(|(h, s)| h - s).collect();
        let parity = diffs.iter().all(|d| d.rem_euclid(2) == 0);
        let no_crossing = diffs.windows(2).all(|w| w[0].signum() * w[1].signum() >= 0);
        let glue = match (self.coupled, self.tau_meet) {
            (true, Some(m)) => {
                let end = self.tau_exit.map_or(diffs.len(), |e| e as usize);
                diffs[m as usize..end].iter().all(|&d| d == 0)
            }
            _ => true,
        };
        let confined = self.s_hat_path.iter().all(|x| (self.a..=self.c).contains(x));
        ContractReport { parity, no_crossing, glue, confined }
    }

    /// Whether the two walkers coincide at step `k`.
    pub fn agree_at(&self, k: u64) -> bool {
        self.s_path[k as usize] == self.s_hat_path[k as usize]
    }
}

/// Couple `S` with the reflected chain on valley `[a, c]` (bottom `b`).
pub fn couple<F: SiteField + ?Sized>(
    field: &F,
    valley: &ValleyRecord,
    opts: CouplingOptions,
) -> Result<CouplingRun, WalkerError> {
    let measure = reflected_invariant_measure(&ReflectedEnv::new(field, valley.a, valley.c, valley.b))?;
    Ok(couple_with_measure(field, &measure, opts))
}

/// As [`couple`], reusing a precomputed `ν̂`.
///
/// `S` always draws from `(seed, Walker, run_id)`. `Ŝ` draws from its own
/// stream until the pair meets, then reuses `S`'s uniform (against `ω̂`) until
/// `S` leaves `[a, c]`, and afterwards draws from a post-exit stream.
pub fn couple_with_measure<F: SiteField + ?Sized>(
    field: &F,
    measure: &InvariantMeasure,
    opts: CouplingOptions,
) -> CouplingRun {
    let (a, c, b) = (measure.a, measure.c, measure.bottom);
    let mut cache = SiteCache::new(field, b);
    let mut s_rng = StreamKey::new(opts.seed, Role::Walker, opts.run_id).rng();
    let mut pre_rng = StreamKey::new(opts.seed, Role::Reflected, opts.run_id).rng();
    let mut post_rng = StreamKey::new(opts.seed, Role::ReflectedPostExit, opts.run_id).rng();
    let mut start_rng = StreamKey::new(opts.seed, Role::StationaryStart, opts.run_id).rng();

    let n = opts.horizon as usize + 1;
    let mut s_path = Vec::with_capacity(n);
    let mut s_hat_path = Vec::with_capacity(n);
    let mut s = b;
    let mut sh = measure.sample_nu(next_unit(&mut start_rng));
    s_path.push(s);
    s_hat_path.push(sh);
    let mut tau_meet = (s == sh).then_some(0);
    let mut tau_exit = None;

    for k in 1..=opts.horizon {
        let u = next_unit(&mut s_rng);
        let omega_s = cache.omega(s);
        let omega_hat = if sh == a {
            1.0
        } else if sh == c {
            0.0
        } else {
            cache.omega(sh)
        };
        let glued = opts.coupled && tau_meet.is_some() && tau_exit.is_none();
        let u_hat = if glued {
            u
        } else if opts.coupled && tau_exit.is_some() {
            next_unit(&mut post_rng)
        } else {
            next_unit(&mut pre_rng)
        };
        s = step_from(s, omega_s, u);
        sh = step_from(sh, omega_hat, u_hat);
        if tau_meet.is_none() && s == sh {
            tau_meet = Some(k);
        } else if tau_meet.is_some() && tau_exit.is_none() && !(a..=c).contains(&s) {
            tau_exit = Some(k);
        }
        s_path.push(s);
        s_hat_path.push(sh);
    }
    CouplingRun { a, c, coupled: opts.coupled, s_path, s_hat_path, tau_meet, tau_exit }
}

/// Monte Carlo estimate of `P^start[S_steps = site]`; run `r` uses the
/// stream `(seed, Walker, r)`.
pub fn occupation_probability<F: SiteField + ?Sized>(
    field: &F,
    start: i64,
    site: i64,
    at_step: u64,
    n_runs: usize,
    seed: u64,
) -> Result<Estimate, WalkerError> {
    if !same_parity(site - start, at_step as i64) {
        return Err(WalkerError::ParityMismatch { start, site, steps: at_step });
    }
    let hits = (0..n_runs as u64)
        .into_par_iter()
        .filter(|&r| {
            let mut cache = SiteCache::new(field, start);
            let mut rng = StreamKey::new(seed, Role::Walker, r).rng();
            let mut x = start;
            for _ in 0..at_step {
                x = step_from(x, cache.omega(x), next_unit(&mut rng));
            }
            x == site
        })
        .count();
    Ok(Estimate::proportion(hits, n_runs))
}

/// Escape from a valley before `2Nᵢ` steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfinementReport {
    pub i: usize,
    pub steps: u64,
    pub check: BoundCheck,
}

/// Probability that the walk started at `bᵢ` reaches `aᵢ − 1` or `cᵢ + 1`
/// within `2Nᵢ` steps, against `4C₀ε₀⁻¹ i^{−(1/κ−1−ε)}` with 4·SE slack.
/// `None` when `Nᵢ` is not representable.
pub fn confinement_check<F: SiteField + ?Sized>(
    field: &F,
    valley: &ValleyRecord,
    sched: &ValleySchedule,
    epsilon0: f64,
    n_runs: usize,
    seed: u64,
) -> Option<ConfinementReport> {
    let steps = 2 * valley.schedule.n_exact?;
    let (lo, hi, b) = (valley.a - 1, valley.c + 1, valley.b);
    let escapes = (0..n_runs as u64)
        .into_par_iter()
        .filter(|&r| {
            let mut rng = StreamKey::new(seed, Role::Walker, r).rng();
            super::exit_time(field, b, lo, hi, steps, &mut rng).is_some()
        })
        .count();
    let est = Estimate::proportion(escapes, n_runs);
    let i = valley.i as f64;
    let bound = 4.0 * sched.c0 / epsilon0 * i.powf(-(1.0 / sched.kappa - 1.0 - sched.epsilon));
    Some(ConfinementReport { i: valley.i, steps, check: BoundCheck::upper(est, bound, 4.0) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::TabulatedField;

    fn valley_field() -> TabulatedField {
        // Downhill into 0 from the left, uphill to the right.
        TabulatedField { offset: -6, values: vec![0.8; 6], fill: 0.2 }
    }

    fn measure(f: &TabulatedField) -> InvariantMeasure {
        reflected_invariant_measure(&ReflectedEnv::new(f, -6, 6, 0)).unwrap()
    }

    #[test]
    fn contracts_hold_and_marginal_is_unchanged() {
        let f = valley_field();
        let m = measure(&f);
        for run_id in 0..50 {
            let opts = CouplingOptions { horizon: 400, seed: 11, run_id, coupled: true };
            let on = couple_with_measure(&f, &m, opts);
            let off = couple_with_measure(&f, &m, CouplingOptions { coupled: false, ..opts });
            assert!(on.check_contracts().all(), "run {run_id}");
            assert!(off.check_contracts().parity);
            assert_eq!(on.s_path, off.s_path);
        }
    }

    #[test]
    fn starting_on_the_bottom_meets_at_zero() {
        let f = valley_field();
        let mut m = measure(&f);
        for (k, w) in m.nu_hat.iter_mut().enumerate() {
            *w = if k == 6 { 1.0 } else { 0.0 };
        }
        let run = couple_with_measure(&f, &m, CouplingOptions { horizon: 10, seed: 1, run_id: 0, coupled: true });
        assert_eq!(run.tau_meet, Some(0));
    }

    #[test]
    fn occupation_edge_cases() {
        let f = valley_field();
        assert_eq!(occupation_probability(&f, 0, 0, 0, 10, 1).unwrap().mean, 1.0);
        assert!(matches!(
            occupation_probability(&f, 0, 1, 2, 10, 1),
            Err(WalkerError::ParityMismatch { .. })
        ));
        let e = occupation_probability(&f, 0, 1, 1, 20_000, 4).unwrap();
        assert!((e.mean - 0.2).abs() < 4.0 * e.se);
    }
}
