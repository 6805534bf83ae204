use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rwre_core::harness::{
    CommandOutcome, ExperimentConfig, Harness, HarnessError, EXIT_HARD_FAILURE, EXIT_PASS, EXIT_USAGE,
};

/// Quenched simulations and exact oracles for random walks in random environment.
#[derive(Debug, Parser)]
#[command(name = "rwre", version)]
struct Cli {
    /// TOML experiment config. Without one, the two-point law ω ∈ {1/4, 3/4}
    /// with P(ω = 1/4) = 0.3 and default parameters is used.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the hypotheses on the law and report kappa and friends.
    CheckEnv,
    /// Locate valleys and the very deep valley indices in the seed-0 environment.
    Valleys,
    /// Run independent walkers in a common environment and log their meetings.
    Collide(CollideArgs),
    /// Run the oracle suite.
    Verify,
    /// Estimate the tail exponent of excursion heights and of sup V.
    Tail(TailArgs),
}

#[derive(Debug, Args)]
struct CollideArgs {
    /// Number of walkers; with no --starts they start at 0, 2, 4, ...
    #[arg(long)]
    d: Option<usize>,
    /// Comma-separated starting sites, all of one parity.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    starts: Option<Vec<i64>>,
    /// Steps per walker.
    #[arg(long)]
    horizon: Option<u64>,
    /// Number of environment seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Record all positions every this many steps (0 = off).
    #[arg(long)]
    checkpoint_stride: Option<u64>,
}

#[derive(Debug, Args)]
struct TailArgs {
    /// Excursion heights and suprema to draw, one fresh environment each.
    #[arg(long)]
    samples: Option<usize>,
}

fn build_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::two_point(0.3, 0),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.output.jobs = j;
    }
    if let Some(d) = &cli.out_dir {
        cfg.output.dir = d.clone();
    }
    match &cli.command {
        Command::Collide(a) => {
            let c = &mut cfg.collide;
            match (&a.starts, a.d) {
                (Some(s), Some(d)) if s.len() != d => {
                    anyhow::bail!("--d {d} disagrees with the {} sites given to --starts", s.len())
                }
                (Some(s), _) => c.starts = s.clone(),
                (None, Some(d)) => c.starts = (0..d as i64).map(|j| 2 * j).collect(),
                (None, None) => {}
            }
            if let Some(h) = a.horizon {
                c.horizon = h;
            }
            if let Some(n) = a.seeds {
                c.n_seeds = n;
            }
            if let Some(s) = a.checkpoint_stride {
                c.checkpoint_stride = s;
            }
        }
        Command::Tail(a) => {
            if let Some(n) = a.samples {
                cfg.tail.samples = n;
            }
        }
        _ => {}
    }
    Ok(cfg)
}

fn dispatch(h: &Harness, cmd: &Command) -> Result<CommandOutcome, HarnessError> {
    match cmd {
        Command::CheckEnv => h.check_env(),
        Command::Valleys => h.valleys(),
        Command::Collide(_) => h.collide(),
        Command::Verify => h.verify(),
        Command::Tail(_) => h.tail(),
    }
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_PASS,
                _ => EXIT_USAGE,
            };
        }
    };
    let cfg = match build_config(&cli).context("bad configuration") {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_USAGE;
        }
    };
    let result = Harness::new(cfg).and_then(|h| dispatch(&h, &cli.command));
    match result {
        Ok(out) => {
            // A closed stdout must not turn a finished run into a failure.
            let mut so = std::io::stdout().lock();
            let _ = writeln!(so, "{}", out.summary);
            for f in &out.files {
                let _ = writeln!(so, "wrote {}", f.display());
            }
            out.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_HARD_FAILURE
            }
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(real_main() as u8)
}
