//! End-to-end acceptance run: nine criteria, one PASS/FAIL line each.
//! Runs as a plain binary so the lines are always shown by `cargo test`.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use rwre_core::env_model::{rate_function, solve_kappa, EnvDistribution, Environment, KAPPA_TOL};
use rwre_core::harness::{env_seed, ExperimentConfig, Harness};
use rwre_core::oracles::{
    conditioned_law_tests, exit_prob_bruteforce, exit_prob_exact, exit_prob_mc, exit_time_mc, expected_exit_time,
    ld_bound_check, sample_tail, stationary_bruteforce, tail_fit, TailKind,
};
use rwre_core::rng::{derive_seed, Role, StreamKey};
use rwre_core::stats::chi_square_gof;
use rwre_core::valleys::{census_with_growth, deep_valley_indices, ValleyRecord, ValleySchedule};
use rwre_core::walker_sim::{
    couple_with_measure, occupation_probability, reflected_invariant_measure, CouplingOptions, InvariantMeasure,
    ReflectedEnv,
};

const SEED: u64 = 20_240_601;

fn law(q: f64) -> EnvDistribution {
    EnvDistribution::two_point(0.25, 0.75, q, 0.25).unwrap()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn triple(rng: &mut impl Rng, lo: i64, hi: i64, max_len: i64) -> (i64, i64, i64) {
    let a = rng.random_range(lo..hi - 2);
    let c = rng.random_range(a + 2..=(a + max_len).min(hi));
    (a, rng.random_range(a + 1..c), c)
}

fn kappa_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    for q in [0.28, 0.3, 0.35, 0.4] {
        let k = solve_kappa(&law(q), KAPPA_TOL).unwrap().kappa;
        worst = worst.max((k - ((1.0 - q) / q).ln() / 3f64.ln()).abs());
    }
    let k03 = solve_kappa(&law(0.3), KAPPA_TOL).unwrap().kappa;
    outcome(worst <= 1e-10 && (k03 - 0.7712437).abs() < 5e-8, format!("max |dev| {worst:.2e}, kappa(0.3) {k03:.10}"))
}

fn oracle_equivalence() -> Outcome {
    let dist = Arc::new(law(0.3));
    let devs: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|e| {
            let env = Environment::from_shared(dist.clone(), derive_seed(SEED, 2, e));
            let mut rng = StreamKey::new(SEED, Role::Replicate, e).with_phase(2).rng();
            let (mut ex, mut st): (f64, f64) = (0.0, 0.0);
            for _ in 0..30 {
                let (a, b, c) = triple(&mut rng, -300, 300, 150);
                let p = exit_prob_exact(&env, a, b, c);
                ex = ex.max(((p - exit_prob_bruteforce(&env, a, b, c)) / p).abs());
                let renv = ReflectedEnv::new(&env, a, c, b);
                let m = reflected_invariant_measure(&renv).unwrap();
                let total: f64 = m.mu_hat.iter().sum();
                for (mu, pi) in m.mu_hat.iter().zip(stationary_bruteforce(&renv)) {
                    st = st.max(((mu / total - pi) / pi).abs());
                }
            }
            (ex, st)
        })
        .collect();
    let ex = devs.iter().map(|d| d.0).fold(0.0, f64::max);
    let st = devs.iter().map(|d| d.1).fold(0.0, f64::max);
    outcome(ex <= 1e-10 && st <= 1e-10, format!("600 configurations: exit rel dev {ex:.2e}, stationary rel dev {st:.2e}"))
}

/// Distance in standard errors; an estimate with zero spread (an exit forced
/// in one step) scores 0 when it matches up to rounding.
fn zscore(estimate: f64, exact: f64, se: f64) -> f64 {
    let diff = (estimate - exact).abs();
    if diff <= 1e-9 * exact.abs().max(1.0) {
        0.0
    } else {
        diff / se
    }
}

fn simulation_vs_formula() -> Outcome {
    let dist = Arc::new(law(0.3));
    let env = Environment::from_shared(dist, derive_seed(SEED, 3, 0));
    let mut rng = StreamKey::new(SEED, Role::Replicate, 0).with_phase(3).rng();
    let (mut prob_ok, mut time_ok, mut bound_ok) = (0, 0, 0);
    let mut worst_z: f64 = 0.0;
    let n_cfg = 20;
    for j in 0..n_cfg {
        let (a, b, c) = triple(&mut rng, -50, 50, 14);
        let p = exit_prob_exact(&env, a, b, c);
        let est = exit_prob_mc(&env, a, b, c, 100_000, derive_seed(SEED, 31, j));
        let z = zscore(est.mean, p, est.se);
        prob_ok += (z <= 4.0) as usize;
        let t = expected_exit_time(&env, a, b, c, 0.25);
        let mc = exit_time_mc(&env, a, b, c, 10_000, derive_seed(SEED, 32, j));
        let zt = zscore(mc.mean, t.mean, mc.se);
        time_ok += (zt <= 4.0) as usize;
        bound_ok += (t.within_bounds() && mc.mean <= t.bound_reflect_left && mc.mean <= t.bound_reflect_right) as usize;
        worst_z = worst_z.max(z).max(zt);
    }
    outcome(
        prob_ok == n_cfg as usize && time_ok == n_cfg as usize && bound_ok == n_cfg as usize,
        format!("{n_cfg} configs: probs {prob_ok}, times {time_ok}, bounds {bound_ok} ok; worst z {worst_z:.2}"),
    )
}

fn tail_exponent() -> Outcome {
    let dist = law(0.3);
    let xs = sample_tail(&dist, TailKind::ExcursionHeight, 100_000, derive_seed(SEED, 4, 0));
    match tail_fit(&xs, TailKind::ExcursionHeight, dist.lattice_span(), 3.0) {
        Ok(t) => outcome(
            (0.694..=0.848).contains(&t.kappa_hat) && t.envelope.0 > 0.0,
            format!(
                "kappa_hat {:.4} ± {:.4} on [{:.3}, {:.3}], C_lo {:.4}",
                t.kappa_hat, t.kappa_se, t.fit_range.0, t.fit_range.1, t.envelope.0
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn large_deviations() -> Outcome {
    let dist = law(0.3);
    let pts = ld_bound_check(&dist, &[20, 50, 100], &[0.0, 0.1, 0.2], 100_000, derive_seed(SEED, 5, 0));
    let ok = pts.iter().filter(|p| p.check.pass).count();
    let tight = pts
        .iter()
        .map(|p| (p.check.estimate + 4.0 * p.check.se) / p.check.bound)
        .fold(0.0, f64::max);
    outcome(
        ok == pts.len() && (rate_function(&dist, 0.0) - 0.08718).abs() < 1e-5,
        format!("{ok}/{} grid points dominated; largest (p + 4SE)/bound {tight:.3}", pts.len()),
    )
}

/// First census valley over successive environment seeds that is in the
/// very deep set with `Nᵢ ∈ [10³, 10⁵]`.
fn find_deep_valley(dist: &Arc<EnvDistribution>, sched: &ValleySchedule) -> Option<(Environment, ValleyRecord)> {
    for s in 0..500 {
        let env = Environment::from_shared(dist.clone(), env_seed(SEED, s));
        let (_, census) = census_with_growth(&env, sched, 6, 1024, 1 << 14, 1 << 22);
        let deep = deep_valley_indices(&census.records, sched, 0);
        let hit = census.records.iter().find(|r| {
            let n = r.schedule.n_exact.unwrap_or(u64::MAX);
            r.i >= deep.i0 && r.flags.deep() && (1_000..=100_000).contains(&n) && r.c >= r.a + 2
        });
        if let Some(r) = hit {
            return Some((env, r.clone()));
        }
    }
    None
}

fn coupling(dist: &Arc<EnvDistribution>) -> Outcome {
    let sched = ValleySchedule::for_distribution(dist, 0.1, 1.0, 1.0, None).unwrap();
    let Some((env, v)) = find_deep_valley(dist, &sched) else {
        return outcome(false, "no very deep valley with N in [1e3, 1e5] in 500 environments");
    };
    let n = v.schedule.n_exact.unwrap();
    let measure: InvariantMeasure = reflected_invariant_measure(&ReflectedEnv::new(&env, v.a, v.c, v.b)).unwrap();
    let k = n + (n % 2);
    let horizon = 2 * n;
    let seed = derive_seed(SEED, 6, 0);

    // Hard contracts and marginal preservation over 10³ runs.
    let runs: Vec<(bool, bool, bool)> = (0..1_000u64)
        .into_par_iter()
        .map(|r| {
            let opts = CouplingOptions { horizon, seed, run_id: r, coupled: true };
            let on = couple_with_measure(&env, &measure, opts);
            let off = couple_with_measure(&env, &measure, CouplingOptions { coupled: false, ..opts });
            (on.check_contracts().all(), on.s_path == off.s_path, !on.agree_at(k))
        })
        .collect();
    let contracts = runs.iter().all(|r| r.0);
    let marginal = runs.iter().all(|r| r.1);
    let failure = runs.iter().filter(|r| r.2).count() as f64 / runs.len() as f64;

    // Stationarity of the two-step reflected chain at an even time.
    let class = measure.class();
    let counts: Vec<u64> = {
        let finals: Vec<i64> = (0..10_000u64)
            .into_par_iter()
            .map(|r| {
                let opts = CouplingOptions { horizon: k, seed: derive_seed(SEED, 61, 0), run_id: r, coupled: true };
                *couple_with_measure(&env, &measure, opts).s_hat_path.last().unwrap()
            })
            .collect();
        class.iter().map(|(x, _)| finals.iter().filter(|f| **f == *x).count() as u64).collect()
    };
    let probs: Vec<f64> = class.iter().map(|c| c.1).collect();
    let chi = chi_square_gof(&counts, &probs);

    // Occupation of the bottom against the stationary mass.
    let occ = occupation_probability(&env, v.b, v.b, k, 10_000, derive_seed(SEED, 62, 0)).unwrap();
    let floor = measure.nu(v.b) - 4.0 * occ.se - failure;
    let ok = contracts && marginal && chi.p_value > 0.01 && occ.mean >= floor;
    outcome(
        ok,
        format!(
            "valley i={} [{}, {}] b={} N={}; contracts {contracts}, marginal {marginal}; chi2 p {:.3} ({} bins); \
             P(S_k=b) {:.4} vs floor {:.4} (nu(b) {:.4}, failure {:.3})",
            v.i,
            v.a,
            v.c,
            v.b,
            n,
            chi.p_value,
            chi.bins,
            occ.mean,
            floor,
            measure.nu(v.b),
            failure
        ),
    )
}

fn collide_config(d: usize, dir: &Path, jobs: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::two_point(0.3, SEED);
    cfg.collide.starts = (0..d as i64).map(|j| 2 * j).collect();
    cfg.collide.horizon = 1_000_000;
    cfg.collide.n_seeds = 30;
    cfg.collide.min_meeting_time = 100;
    cfg.output.dir = dir.to_path_buf();
    cfg.output.jobs = jobs;
    cfg
}

fn meetings_at_desk_scale(root: &Path) -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for d in [2, 3] {
        let h = Harness::new(collide_config(d, &root.join(format!("collide_d{d}")), 8)).unwrap();
        let runs = h.collide_runs().unwrap();
        let many = runs.iter().filter(|r| r.meetings_after_min_time >= 10).count();
        let growing = runs.iter().filter(|r| r.n_meetings > r.meetings_by_tenth_horizon).count();
        let n = runs.len() as f64;
        ok &= many as f64 >= 0.9 * n && growing as f64 >= 0.8 * n;
        details.push(format!("d={d}: {many}/30 with ≥10 meetings, {growing}/30 still meeting after 1e5"));
    }
    outcome(ok, details.join("; "))
}

fn conditioned_walk_identities() -> Outcome {
    match conditioned_law_tests(&law(0.3), 3.0, 10_000, derive_seed(SEED, 8, 0), 0.01) {
        Ok(r) => {
            let min_p = r.left.iter().chain(&r.right).map(|c| c.p_value).fold(1.0, f64::min);
            let max_r = r.independence.iter().map(|c| c.r.abs()).fold(0.0, f64::max);
            outcome(
                r.identities_hold() && r.control_rejects,
                format!(
                    "min KS p {min_p:.4} (threshold {:.4}), max |corr| {max_r:.4}, control rejects {}",
                    r.threshold, r.control_rejects
                ),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn files_under(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn reproducibility(root: &Path) -> Outcome {
    let produce = |jobs: usize| {
        let dir = root.join(format!("repro_{jobs}"));
        let mut cfg = collide_config(3, &dir, jobs);
        cfg.check_env.path_window = Some([-100, 1000]);
        cfg.tail.samples = 20_000;
        cfg.verify.sweep_seeds = 2;
        cfg.verify.triples_per_seed = 20;
        cfg.verify.mc_configs = 2;
        cfg.verify.exit_prob_runs = 2_000;
        cfg.verify.exit_time_runs = 500;
        cfg.verify.golosov_runs = 1_000;
        cfg.verify.ld_samples = 2_000;
        cfg.verify.tail_samples = 20_000;
        cfg.verify.conditioned_samples = 300;
        cfg.verify.calibration_runs = 200;
        cfg.verify.coupling_runs = 20;
        let h = Harness::new(cfg).unwrap();
        h.check_env().unwrap();
        h.valleys().unwrap();
        h.collide().unwrap();
        h.tail().unwrap();
        h.verify().unwrap();
        dir
    };
    let (d1, d8) = (produce(1), produce(8));
    let (f1, f8) = (files_under(&d1), files_under(&d8));
    let names = |fs: &[std::path::PathBuf], d: &Path| -> Vec<_> { fs.iter().map(|f| f.strip_prefix(d).unwrap().to_path_buf()).collect() };
    let same_names = names(&f1, &d1) == names(&f8, &d8);
    let differing = f1.iter().zip(&f8).filter(|(a, b)| fs::read(a).unwrap() != fs::read(b).unwrap()).count();
    outcome(
        same_names && differing == 0 && !f1.is_empty(),
        format!("{} files per run, {differing} differ between 1 and 8 workers", f1.len()),
    )
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; a filter
    // argument that does not mention this target skips it.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let root = tempfile::tempdir().unwrap();
    let dist = Arc::new(law(0.3));
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 kappa exactness", Box::new(kappa_exactness)),
        ("2 oracle equivalence", Box::new(oracle_equivalence)),
        ("3 simulation vs formula", Box::new(simulation_vs_formula)),
        ("4 tail exponent", Box::new(tail_exponent)),
        ("5 large-deviation dominance", Box::new(large_deviations)),
        ("6 coupling contracts", Box::new(|| coupling(&dist))),
        ("7 meetings at desk scale", Box::new(|| meetings_at_desk_scale(root.path()))),
        ("8 conditioned-walk identities", Box::new(conditioned_walk_identities)),
        ("9 reproducibility", Box::new(|| reproducibility(root.path()))),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let t = Instant::now();
        let o = run();
        failed += (!o.pass) as usize;
        println!(
            "criterion {name}: {} ({:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
