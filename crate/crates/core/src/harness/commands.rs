use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::config::{ConfigError, ExperimentConfig};
use super::{EXIT_HARD_FAILURE, EXIT_PASS};
use crate::env_model::{
    check_assumptions, rate_function, solve_kappa, AssumptionReport, EnvDistribution, Environment, KappaSolution,
    KAPPA_TOL,
};
use crate::oracles::{sample_tail, tail_fit, verify, TailEstimate, TailKind, VerifyReport};
use crate::potential::potential;
use crate::rng::derive_seed;
use crate::valleys::{census_with_growth, deep_valley_indices, DeepValleyIndex, ValleyRecord, ValleySchedule};
use crate::walker_sim::{run, MeetingLog, RunOptions, TrajectorySummary, WalkerError};

const ENV_TAG: u64 = 0x656e_7669_726f_6e00;
const TAIL_TAG: u64 = 0x7461_696c_0000_0000;

/// Seed of the environment behind experiment seed `s`. The `valleys` and
/// `check-env` commands describe seed 0.
pub fn env_seed(master_seed: u64, s: u64) -> u64 {
    derive_seed(master_seed, ENV_TAG, s)
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Walker(#[from] WalkerError),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

impl HarnessError {
    /// Configuration problems are usage errors; the rest are failures.
    pub fn is_usage(&self) -> bool {
        matches!(self, HarnessError::Config(_) | HarnessError::Walker(WalkerError::MixedParity(_)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    #[serde(flatten)]
    provenance: &'a Provenance,
    #[serde(flatten)]
    body: &'a T,
}

/// What a command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutcome {
    pub exit_code: i32,
    pub files: Vec<PathBuf>,
    /// Short human-readable account.
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvReport {
    pub distribution: EnvDistribution,
    pub assumptions: AssumptionReport,
    pub kappa: Option<KappaSolution>,
    pub kappa_error: Option<String>,
    /// Rate function at 0.
    pub rate_at_zero: f64,
    pub lattice_span: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValleyReport {
    pub env_seed: u64,
    pub schedule: ValleySchedule,
    pub window: (i64, i64),
    pub census_exhausted: bool,
    pub records: Vec<ValleyRecord>,
    pub deep: DeepValleyIndex,
    /// `i(n) ≥ n` for every selected index.
    pub indices_dominate_rank: bool,
}

/// Innermost census valley around each meeting site.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeetingJoin {
    /// Valley index per meeting, `None` outside every located `[a, c]`.
    pub valley_of_meeting: Vec<Option<usize>>,
    /// `(i, a, c, meetings)` for each located valley.
    pub per_valley: Vec<(usize, i64, i64, usize)>,
    pub census_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollideRun {
    pub seed_index: u64,
    pub env_seed: u64,
    pub starts: Vec<i64>,
    pub horizon: u64,
    pub n_meetings: usize,
    pub first_meeting: Option<u64>,
    pub last_meeting: Option<u64>,
    /// Meetings at times `≥ min_meeting_time`.
    pub meetings_after_min_time: usize,
    /// Meetings at times `≤ horizon / 10`.
    pub meetings_by_tenth_horizon: usize,
    pub summary: TrajectorySummary,
    pub meetings: MeetingLog,
    pub join: Option<MeetingJoin>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailReport {
    pub kappa: Option<f64>,
    pub excursion_height: Result<TailEstimate, String>,
    pub sup_potential: Result<TailEstimate, String>,
}

/// A validated configuration plus the worker pool that runs it.
pub struct Harness {
    cfg: ExperimentConfig,
    dist: Arc<EnvDistribution>,
    provenance: Provenance,
    pool: rayon::ThreadPool,
}

impl Harness {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, HarnessError> {
        let dist = Arc::new(cfg.validate()?);
        let provenance = Provenance { config_hash: cfg.hash(), seed: cfg.master_seed };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.output.jobs)
            .build()
            .map_err(|e| HarnessError::Pool(e.to_string()))?;
        Ok(Self { cfg, dist, provenance, pool })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    fn out_dir(&self) -> &Path {
        &self.cfg.output.dir
    }

    fn environment(&self, s: u64) -> Environment {
        Environment::from_shared(self.dist.clone(), env_seed(self.cfg.master_seed, s))
    }

    pub fn env_report(&self) -> EnvReport {
        let dist = &*self.dist;
        let kappa = solve_kappa(dist, KAPPA_TOL);
        EnvReport {
            distribution: dist.clone(),
            assumptions: check_assumptions(dist),
            kappa_error: kappa.as_ref().err().map(|e| e.to_string()),
            kappa: kappa.ok(),
            rate_at_zero: rate_function(dist, 0.0),
            lattice_span: dist.lattice_span(),
        }
    }

    pub fn check_env(&self) -> Result<CommandOutcome, HarnessError> {
        let report = self.env_report();
        let mut files = vec![self.write_json("check_env.json", &report)?];
        if let Some([lo, hi]) = self.cfg.check_env.path_window {
            let env = self.environment(0);
            let path = potential(&env, (lo, hi)).expect("window contains 0");
            let (file, mut w) = self.create("path.csv")?;
            writeln!(w, "{}", self.provenance_line(&[("env_seed", env.master_seed().to_string())]))
                .and_then(|_| path.write_csv(&env, &mut w))
                .and_then(|_| w.flush())
                .map_err(|source| HarnessError::Io { path: file.clone(), source })?;
            files.push(file);
        }
        let a = &report.assumptions;
        let summary = format!(
            "elliptic {}  transient {}  kappa in (0,1) {}  kappa {}  kappa0 {}  v0 {}  I(0) {:.6}  lattice span {}",
            a.elliptic,
            a.transient_right,
            a.kappa_in_unit_interval,
            fmt_opt(a.moments.kappa),
            fmt_opt(a.moments.kappa0),
            fmt_opt(a.moments.v0),
            report.rate_at_zero,
            fmt_opt(report.lattice_span),
        );
        let exit_code = if a.all_hold() { EXIT_PASS } else { EXIT_HARD_FAILURE };
        Ok(CommandOutcome { exit_code, files, summary })
    }

    pub fn valley_report(&self) -> Result<ValleyReport, HarnessError> {
        let sched = self.cfg.schedule(&self.dist)?;
        let p = &self.cfg.valleys;
        let env = self.environment(0);
        let (path, census) =
            self.pool.install(|| census_with_growth(&env, &sched, p.i_max, p.left_extent, p.initial_window, p.max_sites));
        let deep = deep_valley_indices(&census.records, &sched, p.n_max);
        let indices_dominate_rank = deep.indices.iter().enumerate().all(|(n, &i)| i >= n);
        Ok(ValleyReport {
            env_seed: env.master_seed(),
            schedule: sched,
            window: (path.x_min(), path.x_max()),
            census_exhausted: census.exhausted,
            records: census.records,
            deep,
            indices_dominate_rank,
        })
    }

    pub fn valleys(&self) -> Result<CommandOutcome, HarnessError> {
        let r = self.valley_report()?;
        let mut rows = vec![[
            "i", "sigma", "a", "alpha", "b", "gamma", "c", "height", "N_i", "f_i", "z_i", "omega1", "omega2", "omega3",
            "omega4", "omega5", "omega6",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()];
        for v in &r.records {
            let n = v.schedule.n_exact.map_or_else(|| v.schedule.n.to_string(), |n| n.to_string());
            let mut row = vec![
                v.i.to_string(),
                v.sigma.to_string(),
                v.a.to_string(),
                v.alpha.to_string(),
                v.b.to_string(),
                v.gamma.to_string(),
                v.c.to_string(),
                v.height.to_string(),
                n,
                v.schedule.f.to_string(),
                v.schedule.z.to_string(),
            ];
            row.extend(v.flags.as_array().iter().map(|f| f.to_string()));
            rows.push(row);
        }
        let extra = [("env_seed", r.env_seed.to_string()), ("census_exhausted", r.census_exhausted.to_string())];
        let files = vec![self.write_csv("valleys.csv", &rows, &extra)?, self.write_json("deep_valleys.json", &r)?];
        let summary = format!(
            "{} valleys on [{}, {}]{}; i0 = {}; deep indices {:?}{}",
            r.records.len(),
            r.window.0,
            r.window.1,
            if r.census_exhausted { " (window cap reached)" } else { "" },
            r.deep.i0,
            r.deep.indices,
            if r.deep.exhausted { " (stream ended early)" } else { "" },
        );
        let exit_code = if r.indices_dominate_rank { EXIT_PASS } else { EXIT_HARD_FAILURE };
        Ok(CommandOutcome { exit_code, files, summary })
    }

    fn collide_one(&self, s: u64, sched: Option<&ValleySchedule>) -> Result<CollideRun, WalkerError> {
        let c = &self.cfg.collide;
        let env = self.environment(s);
        let opts = RunOptions { horizon: c.horizon, checkpoint_stride: c.checkpoint_stride, detect_meetings: true };
        let (summary, meetings) = run(&env, &c.starts, env.master_seed(), opts)?;
        let join = sched.map(|sched| {
            let p = &self.cfg.valleys;
            let (_, census) = census_with_growth(&env, sched, p.i_max, p.left_extent, p.initial_window, p.max_sites);
            join_meetings(&census.records, &meetings, census.exhausted)
        });
        Ok(CollideRun {
            seed_index: s,
            env_seed: env.master_seed(),
            starts: c.starts.clone(),
            horizon: c.horizon,
            n_meetings: meetings.len(),
            first_meeting: meetings.meeting_times.first().copied(),
            last_meeting: meetings.meeting_times.last().copied(),
            meetings_after_min_time: meetings.count_between(c.min_meeting_time, c.horizon),
            meetings_by_tenth_horizon: meetings.count_between(0, c.horizon / 10),
            summary,
            meetings,
            join,
        })
    }

    /// One quenched run per seed index, in seed order whatever the pool size.
    pub fn collide_runs(&self) -> Result<Vec<CollideRun>, HarnessError> {
        let sched = self.cfg.schedule(&self.dist).ok();
        let n = self.cfg.collide.n_seeds as u64;
        let runs: Result<Vec<CollideRun>, WalkerError> =
            self.pool.install(|| (0..n).into_par_iter().map(|s| self.collide_one(s, sched.as_ref())).collect());
        Ok(runs?)
    }

    pub fn collide(&self) -> Result<CommandOutcome, HarnessError> {
        let runs = self.collide_runs()?;
        let dir = self.out_dir().join("collide");
        fs::create_dir_all(&dir).map_err(|source| HarnessError::Io { path: dir.clone(), source })?;
        let mut files = Vec::with_capacity(runs.len() + 1);
        for r in &runs {
            // Meeting lists run to hundreds of thousands of entries.
            files.push(self.write_json_with(&format!("collide/seed_{:04}.json", r.seed_index), r, false)?);
        }
        let mut rows = vec![[
            "seed",
            "env_seed",
            "n_meetings",
            "first_meeting",
            "last_meeting",
            "meetings_after_min_time",
            "meetings_by_tenth_horizon",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()];
        for r in &runs {
            rows.push(vec![
                r.seed_index.to_string(),
                r.env_seed.to_string(),
                r.n_meetings.to_string(),
                r.first_meeting.map_or(String::new(), |t| t.to_string()),
                r.last_meeting.map_or(String::new(), |t| t.to_string()),
                r.meetings_after_min_time.to_string(),
                r.meetings_by_tenth_horizon.to_string(),
            ]);
        }
        files.push(self.write_csv("collide.csv", &rows, &[])?);
        let with = runs.iter().filter(|r| r.meetings_after_min_time > 0).count();
        let summary = format!(
            "{} seeds, d = {}, horizon {}: {} with meetings at times ≥ {}",
            runs.len(),
            self.cfg.collide.starts.len(),
            self.cfg.collide.horizon,
            with,
            self.cfg.collide.min_meeting_time
        );
        Ok(CommandOutcome { exit_code: EXIT_PASS, files, summary })
    }

    pub fn verify_report(&self) -> VerifyReport {
        self.pool.install(|| verify(&self.dist, self.cfg.master_seed, &self.cfg.verify))
    }

    pub fn verify(&self) -> Result<CommandOutcome, HarnessError> {
        let r = self.verify_report();
        let files = vec![self.write_json("verify.json", &r)?];
        let summary = format!(
            "{} checks: {} hard failures, {}/{} statistical failures",
            r.checks.len(),
            r.hard_failures,
            r.statistical_failures,
            r.statistical_total
        );
        Ok(CommandOutcome { exit_code: r.exit_code, files, summary })
    }

    pub fn tail_report(&self) -> TailReport {
        let p = &self.cfg.tail;
        let span = self.dist.lattice_span();
        let fit = |kind: TailKind, k: u64| {
            let xs = self.pool.install(|| sample_tail(&self.dist, kind, p.samples, derive_seed(self.cfg.master_seed, TAIL_TAG, k)));
            tail_fit(&xs, kind, span, p.h_min).map_err(|e| e.to_string())
        };
        TailReport {
            kappa: check_assumptions(&self.dist).moments.kappa,
            excursion_height: fit(TailKind::ExcursionHeight, 0),
            sup_potential: fit(TailKind::SupV, 1),
        }
    }

    pub fn tail(&self) -> Result<CommandOutcome, HarnessError> {
        if !(self.dist.mean_log_rho() < 0.0) {
            return Err(ConfigError::Invalid("tail sampling needs E log rho < 0 so that excursions end".into()).into());
        }
        let r = self.tail_report();
        let files = vec![self.write_json("tail.json", &r)?];
        let show = |e: &Result<TailEstimate, String>| match e {
            Ok(t) => format!("kappa_hat {:.4} ± {:.4}", t.kappa_hat, t.kappa_se),
            Err(msg) => msg.clone(),
        };
        let summary = format!(
            "kappa {}; excursion heights: {}; sup V: {}",
            fmt_opt(r.kappa),
            show(&r.excursion_height),
            show(&r.sup_potential)
        );
        let ok = r.excursion_height.is_ok() && r.sup_potential.is_ok();
        Ok(CommandOutcome { exit_code: if ok { EXIT_PASS } else { EXIT_HARD_FAILURE }, files, summary })
    }

    fn create(&self, name: &str) -> Result<(PathBuf, BufWriter<File>), HarnessError> {
        let path = self.out_dir().join(name);
        let io = |source| HarnessError::Io { path: path.clone(), source };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io)?;
        }
        let f = File::create(&path).map_err(io)?;
        Ok((path.clone(), BufWriter::new(f)))
    }

    fn write_json<T: Serialize>(&self, name: &str, body: &T) -> Result<PathBuf, HarnessError> {
        self.write_json_with(name, body, true)
    }

    fn write_json_with<T: Serialize>(&self, name: &str, body: &T, pretty: bool) -> Result<PathBuf, HarnessError> {
        let (path, mut w) = self.create(name)?;
        let stamped = Stamped { provenance: &self.provenance, body };
        let res = if pretty {
            serde_json::to_writer_pretty(&mut w, &stamped)
        } else {
            serde_json::to_writer(&mut w, &stamped)
        };
        let res = res
            .map_err(std::io::Error::from)
            .and_then(|_| w.write_all(b"\n"))
            .and_then(|_| w.flush());
        res.map_err(|source| HarnessError::Io { path: path.clone(), source })?;
        Ok(path)
    }

    fn provenance_line(&self, extra: &[(&str, String)]) -> String {
        let mut line = format!("# config_hash={} seed={}", self.provenance.config_hash, self.provenance.seed);
        for (k, v) in extra {
            line.push_str(&format!(" {k}={v}"));
        }
        line
    }

    /// CSV with a leading `# key=value …` provenance comment line.
    fn write_csv(&self, name: &str, rows: &[Vec<String>], extra: &[(&str, String)]) -> Result<PathBuf, HarnessError> {
        let (path, mut w) = self.create(name)?;
        let io = |source| HarnessError::Io { path: path.clone(), source };
        writeln!(w, "{}", self.provenance_line(extra)).map_err(io)?;
        let mut csv = csv::Writer::from_writer(w);
        for row in rows {
            csv.write_record(row).map_err(|e| io(e.into()))?;
        }
        csv.flush().map_err(io)?;
        Ok(path)
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.10}"))
}

fn join_meetings(records: &[ValleyRecord], log: &MeetingLog, census_exhausted: bool) -> MeetingJoin {
    let valley_of_meeting: Vec<Option<usize>> = log
        .meeting_sites
        .iter()
        .map(|&x| records.iter().rev().find(|r| r.a <= x && x <= r.c).map(|r| r.i))
        .collect();
    let per_valley = records
        .iter()
        .map(|r| (r.i, r.a, r.c, valley_of_meeting.iter().filter(|v| **v == Some(r.i)).count()))
        .collect();
    MeetingJoin { valley_of_meeting, per_valley, census_exhausted }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harness(dir: &Path, jobs: usize) -> Harness {
        let mut cfg = ExperimentConfig::two_point(0.3, 5);
        cfg.output.dir = dir.to_path_buf();
        cfg.output.jobs = jobs;
        cfg.collide.horizon = 20_000;
        cfg.collide.n_seeds = 4;
        cfg.valleys.i_max = 4;
        Harness::new(cfg).unwrap()
    }

    #[test]
    fn same_start_meets_at_zero() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::two_point(0.3, 5);
        cfg.output.dir = dir.path().to_path_buf();
        cfg.collide.starts = vec![0, 0];
        cfg.collide.horizon = 100;
        cfg.collide.n_seeds = 3;
        let h = Harness::new(cfg).unwrap();
        for r in h.collide_runs().unwrap() {
            assert!(r.n_meetings >= 1);
            assert_eq!(r.first_meeting, Some(0));
        }
    }

    #[test]
    fn collide_outputs_do_not_depend_on_pool_size() {
        let d1 = tempfile::tempdir().unwrap();
        let d4 = tempfile::tempdir().unwrap();
        let o1 = harness(d1.path(), 1).collide().unwrap();
        let o4 = harness(d4.path(), 4).collide().unwrap();
        assert_eq!(o1.files.len(), o4.files.len());
        for (a, b) in o1.files.iter().zip(&o4.files) {
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{}", a.display());
        }
    }

    #[test]
    fn valleys_csv_has_header_and_rows() {
        let d = tempfile::tempdir().unwrap();
        let h = harness(d.path(), 2);
        let out = h.valleys().unwrap();
        let text = fs::read_to_string(&out.files[0]).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# config_hash="));
        assert!(lines.next().unwrap().starts_with("i,sigma,a,alpha,b,gamma,c,height,N_i,f_i,z_i,omega1"));
        assert_eq!(lines.count(), 4);
    }

    #[test]
    fn meeting_join_picks_innermost() {
        let log = MeetingLog { meeting_times: vec![3, 5, 9], meeting_sites: vec![1, 7, 50] };
        let mk = |i, a, c| ValleyRecord {
            i,
            sigma: i,
            a,
            alpha: a,
            b: a + 1,
            gamma: c,
            c,
            beta_minus: None,
            beta_plus: None,
            height: 1.0,
            lower_cap: a,
            upper_cap: c,
            schedule: crate::valleys::ScheduleEntry { n: 1.0, n_exact: Some(1), log_n: 0.0, f: 0.0, z: 0.0 },
            flags: Default::default(),
        };
        let recs = vec![mk(1, 0, 10), mk(2, 5, 20)];
        let j = join_meetings(&recs, &log, false);
        assert_eq!(j.valley_of_meeting, vec![Some(1), Some(2), None]);
        assert_eq!(j.per_valley, vec![(1, 0, 10, 1), (2, 5, 20, 1)]);
    }
}
