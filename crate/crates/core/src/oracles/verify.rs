use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::calibration::{first_ascent_time_calibration, invariant_sum_check, ld_bound_check};
use super::conditioned::conditioned_law_tests;
use super::exit::{
    exit_prob_bruteforce, exit_prob_exact, exit_prob_mc, exit_time_mc, expected_exit_time, golosov_bounds,
};
use super::stationary::stationary_bruteforce;
use super::tail::{sample_tail, tail_fit, TailKind};
use crate::env_model::{check_assumptions, solve_kappa, EnvDistribution, Environment, KAPPA_TOL};
use crate::rng::{derive_seed, Role, StreamKey};
use crate::valleys::{census_with_growth, ValleySchedule};
use crate::walker_sim::{couple_with_measure, reflected_invariant_measure, CouplingOptions, ReflectedEnv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    /// Deterministic: any failure is a defect.
    Hard,
    /// Monte Carlo: failures are expected at the stated level.
    Statistical,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub kind: CheckKind,
    pub values: serde_json::Value,
    pub bound: Option<f64>,
    pub se: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckRecord>,
    pub hard_failures: usize,
    pub statistical_failures: usize,
    pub statistical_total: usize,
    /// 0 all good, 1 a hard check failed, 2 more than 1% of statistical checks failed.
    pub exit_code: i32,
}

/// Sample sizes of the suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyBudget {
    pub sweep_seeds: usize,
    pub triples_per_seed: usize,
    pub mc_configs: usize,
    pub exit_prob_runs: usize,
    pub exit_time_runs: usize,
    pub golosov_runs: usize,
    pub ld_samples: usize,
    pub tail_samples: usize,
    pub conditioned_samples: usize,
    pub calibration_runs: usize,
    pub coupling_runs: usize,
}

impl Default for VerifyBudget {
    fn default() -> Self {
        Self {
            sweep_seeds: 10,
            triples_per_seed: 50,
            mc_configs: 5,
            exit_prob_runs: 20_000,
            exit_time_runs: 4_000,
            golosov_runs: 10_000,
            ld_samples: 20_000,
            tail_samples: 50_000,
            conditioned_samples: 2_000,
            calibration_runs: 2_000,
            coupling_runs: 200,
        }
    }
}

struct Suite {
    checks: Vec<CheckRecord>,
}

impl Suite {
    fn push(&mut self, name: &str, kind: CheckKind, values: serde_json::Value, bound: Option<f64>, se: Option<f64>, pass: bool) {
        self.checks.push(CheckRecord { name: name.to_string(), kind, values, bound, se, pass });
    }
}

/// `|estimate − exact| ≤ 4·SE`, with rounding slack for zero-variance cases
/// such as an exit forced after one step.
fn within_se(estimate: f64, exact: f64, se: f64) -> bool {
    (estimate - exact).abs() <= 4.0 * se + 1e-9 * exact.abs().max(1.0)
}

/// Random `(a, b, c)` with `a < b < c`, `c − a ≤ max_len`, inside `[lo, hi]`.
fn random_triple(rng: &mut impl Rng, lo: i64, hi: i64, max_len: i64) -> (i64, i64, i64) {
    let a = rng.random_range(lo..hi - 2);
    let c = rng.random_range(a + 2..=(a + max_len).min(hi));
    let b = rng.random_range(a + 1..c);
    (a, b, c)
}

/// Run the oracle suite on the law `dist`, with environments derived from `seed`.
pub fn verify(dist: &EnvDistribution, seed: u64, budget: &VerifyBudget) -> VerifyReport {
    let mut s = Suite { checks: Vec::new() };
    let shared = Arc::new(dist.clone());
    let eps0 = dist.epsilon0();
    let report = check_assumptions(dist);

    let kappa = solve_kappa(dist, KAPPA_TOL).ok();
    if let Some(k) = &kappa {
        let resid = (dist.moment(k.kappa) - 1.0).abs();
        s.push("kappa_moment_identity", CheckKind::Hard, json!({"kappa": k.kappa, "residual": resid}), Some(1e-10), None, resid <= 1e-10);
    }

    // Closed-form exit probabilities against the tridiagonal solve.
    let sweep: Vec<(f64, f64)> = (0..budget.sweep_seeds as u64)
        .into_par_iter()
        .map(|e| {
            let env = Environment::from_shared(shared.clone(), derive_seed(seed, 101, e));
            let mut rng = StreamKey::new(seed, Role::Replicate, e).with_phase(101).rng();
            let mut exit_dev: f64 = 0.0;
            let mut stat_dev: f64 = 0.0;
            for _ in 0..budget.triples_per_seed {
                let (a, b, c) = random_triple(&mut rng, -200, 200, 120);
                let ex = exit_prob_exact(&env, a, b, c);
                let bf = exit_prob_bruteforce(&env, a, b, c);
                exit_dev = exit_dev.max(((ex - bf) / ex).abs());
                let renv = ReflectedEnv::new(&env, a, c, b);
                let mu = reflected_invariant_measure(&renv).expect("c ≥ a + 2");
                let total: f64 = mu.mu_hat.iter().sum();
                let pi = stationary_bruteforce(&renv);
                for (m, p) in mu.mu_hat.iter().zip(&pi) {
                    stat_dev = stat_dev.max(((m / total - p) / p).abs());
                }
            }
            (exit_dev, stat_dev)
        })
        .collect();
    let exit_dev = sweep.iter().map(|d| d.0).fold(0.0, f64::max);
    let stat_dev = sweep.iter().map(|d| d.1).fold(0.0, f64::max);
    let n_cfg = budget.sweep_seeds * budget.triples_per_seed;
    s.push("exit_prob_closed_form_vs_solve", CheckKind::Hard, json!({"configurations": n_cfg, "max_rel_dev": exit_dev}), Some(1e-10), None, exit_dev <= 1e-10);
    s.push("stationary_closed_form_vs_gth", CheckKind::Hard, json!({"configurations": n_cfg, "max_rel_dev": stat_dev}), Some(1e-10), None, stat_dev <= 1e-10);

    // Monte Carlo against the exact exit law and exit time.
    let env = Environment::from_shared(shared.clone(), derive_seed(seed, 102, 0));
    let mut rng = StreamKey::new(seed, Role::Replicate, 0).with_phase(102).rng();
    for j in 0..budget.mc_configs {
        let (a, b, c) = random_triple(&mut rng, -40, 40, 16);
        let p = exit_prob_exact(&env, a, b, c);
        let est = exit_prob_mc(&env, a, b, c, budget.exit_prob_runs, derive_seed(seed, 103, j as u64));
        let pass = within_se(est.mean, p, est.se);
        s.push("exit_prob_mc", CheckKind::Statistical, json!({"a": a, "b": b, "c": c, "exact": p, "estimate": est.mean}), Some(p), Some(est.se), pass);

        let t = expected_exit_time(&env, a, b, c, eps0);
        s.push(
            "exit_time_bounds",
            CheckKind::Hard,
            json!({"a": a, "b": b, "c": c, "mean": t.mean, "bound_reflect_left": t.bound_reflect_left, "bound_reflect_right": t.bound_reflect_right}),
            Some(t.bound_reflect_left.min(t.bound_reflect_right)),
            None,
            t.within_bounds(),
        );
        let mc = exit_time_mc(&env, a, b, c, budget.exit_time_runs, derive_seed(seed, 104, j as u64));
        let pass = within_se(mc.mean, t.mean, mc.se);
        s.push("exit_time_mc", CheckKind::Statistical, json!({"a": a, "b": b, "c": c, "exact": t.mean, "estimate": mc.mean}), Some(t.mean), Some(mc.se), pass);

        let k = ((c - b) as u64).pow(2).max(2);
        let g = golosov_bounds(&env, b, c, k, budget.golosov_runs, derive_seed(seed, 105, j as u64));
        s.push("golosov_right", CheckKind::Statistical, json!({"b": b, "c": c, "k": k, "estimate": g.check.estimate}), Some(g.bound), Some(g.check.se), g.check.pass);
        let g = golosov_bounds(&env, b, a, k, budget.golosov_runs, derive_seed(seed, 106, j as u64));
        s.push("golosov_left", CheckKind::Statistical, json!({"b": b, "a": a, "k": k, "estimate": g.check.estimate}), Some(g.bound), Some(g.check.se), g.check.pass);
    }

    for pt in ld_bound_check(dist, &[20, 50, 100], &[0.0, 0.1, 0.2], budget.ld_samples, derive_seed(seed, 107, 0)) {
        s.push(
            "large_deviation_bound",
            CheckKind::Statistical,
            json!({"k": pt.k, "y": pt.y, "rate": pt.rate, "estimate": pt.check.estimate}),
            Some(pt.check.bound),
            Some(pt.check.se),
            pt.check.pass,
        );
    }

    let Some(kappa) = kappa.filter(|k| k.in_unit_interval && report.transient_right) else {
        return finish(s);
    };
    let k = kappa.kappa;

    let heights = sample_tail(dist, TailKind::ExcursionHeight, budget.tail_samples, derive_seed(seed, 108, 0));
    match tail_fit(&heights, TailKind::ExcursionHeight, dist.lattice_span(), 3.0) {
        Ok(t) => {
            let pass = (t.kappa_hat / k - 1.0).abs() <= 0.1 && t.envelope.0 > 0.0;
            s.push("tail_exponent", CheckKind::Statistical, json!({"kappa": k, "kappa_hat": t.kappa_hat, "envelope": t.envelope}), Some(0.1), Some(t.kappa_se), pass);
        }
        Err(e) => s.push("tail_exponent", CheckKind::Statistical, json!({"error": e.to_string()}), None, None, false),
    }

    match conditioned_law_tests(dist, 3.0, budget.conditioned_samples, derive_seed(seed, 109, 0), 0.01) {
        Ok(r) => {
            let min_p = r.left.iter().chain(&r.right).map(|c| c.p_value).fold(1.0, f64::min);
            s.push("conditioned_laws", CheckKind::Statistical, serde_json::to_value(&r).unwrap(), Some(r.threshold), None, r.identities_hold());
            s.push("conditioned_laws_control", CheckKind::Statistical, json!({"min_identity_p": min_p}), Some(r.threshold), None, r.control_rejects);
        }
        Err(e) => s.push("conditioned_laws", CheckKind::Statistical, json!({"error": e.to_string()}), None, None, false),
    }

    // Calibrations should be stable across disjoint seed batches.
    let half = budget.calibration_runs / 2;
    let c0: Vec<_> = (0..2)
        .map(|b| first_ascent_time_calibration(dist, &[2.0, 3.0], half, derive_seed(seed, 110, b)))
        .collect();
    let ratio = c0[0].c0_hat / c0[1].c0_hat;
    s.push(
        "first_ascent_time_stability",
        CheckKind::Statistical,
        json!({"c0_hat": [c0[0].c0_hat, c0[1].c0_hat], "reflection_ok": c0[0].reflection_ok && c0[1].reflection_ok}),
        Some(2.0),
        None,
        ratio < 2.0 && ratio > 0.5,
    );
    s.push("reflection_at_zero", CheckKind::Hard, json!({}), None, None, c0[0].reflection_ok && c0[1].reflection_ok);
    let c2: Vec<_> = (0..2).map(|b| invariant_sum_check(dist, 3.0, half, derive_seed(seed, 111, b))).collect();
    let ratio = c2[0].c2_calibration() / c2[1].c2_calibration();
    s.push(
        "invariant_sum_stability",
        CheckKind::Statistical,
        json!({"c2_hat": [c2[0].c2_calibration(), c2[1].c2_calibration()]}),
        Some(2.0),
        None,
        ratio < 2.0 && ratio > 0.5,
    );

    coupling_checks(&mut s, dist, seed, budget, k);
    finish(s)
}

fn coupling_checks(s: &mut Suite, dist: &EnvDistribution, seed: u64, budget: &VerifyBudget, kappa: f64) {
    let Ok(sched) = ValleySchedule::for_distribution(dist, 0.1f64.min(0.9 * (1.0 - kappa) / (2.0 * kappa)), 1.0, 1.0, None) else {
        return;
    };
    let env = Environment::from_shared(Arc::new(dist.clone()), derive_seed(seed, 112, 0));
    let (_, census) = census_with_growth(&env, &sched, 5, 4096, 1 << 14, 1 << 22);
    let valley = census
        .records
        .iter()
        .rev()
        .find(|r| !r.is_degenerate() && r.c >= r.a + 2 && r.schedule.n_exact.is_some_and(|n| n <= 50_000));
    let Some(v) = valley else { return };
    let measure = reflected_invariant_measure(&ReflectedEnv::new(&env, v.a, v.c, v.b)).expect("c ≥ a + 2");
    let horizon = (2 * v.schedule.n_exact.unwrap()).min(20_000);
    let results: Vec<(bool, bool)> = (0..budget.coupling_runs as u64)
        .into_par_iter()
        .map(|r| {
            let opts = CouplingOptions { horizon, seed: derive_seed(seed, 113, 0), run_id: r, coupled: true };
            let on = couple_with_measure(&env, &measure, opts);
            let off = couple_with_measure(&env, &measure, CouplingOptions { coupled: false, ..opts });
            (on.check_contracts().all(), on.s_path == off.s_path)
        })
        .collect();
    let contracts = results.iter().all(|r| r.0);
    let marginal = results.iter().all(|r| r.1);
    s.push("coupling_contracts", CheckKind::Hard, json!({"valley": v.i, "a": v.a, "b": v.b, "c": v.c, "runs": results.len()}), None, None, contracts);
    s.push("coupling_marginal_preserved", CheckKind::Hard, json!({"runs": results.len()}), None, None, marginal);
}

fn finish(s: Suite) -> VerifyReport {
    let hard_failures = s.checks.iter().filter(|c| c.kind == CheckKind::Hard && !c.pass).count();
    let statistical_total = s.checks.iter().filter(|c| c.kind == CheckKind::Statistical).count();
    let statistical_failures = s.checks.iter().filter(|c| c.kind == CheckKind::Statistical && !c.pass).count();
    let exit_code = if hard_failures > 0 {
        1
    } else if statistical_failures as f64 > 0.01 * statistical_total as f64 {
        2
    } else {
        0
    };
    VerifyReport { checks: s.checks, hard_failures, statistical_failures, statistical_total, exit_code }
}
