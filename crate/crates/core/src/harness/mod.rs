//! Configuration, seeded parallel orchestration and result files for the
//! command-line front end.

mod commands;
mod config;

pub use commands::{
    env_seed, CollideRun, CommandOutcome, EnvReport, Harness, HarnessError, MeetingJoin, Provenance,
    TailReport, ValleyReport,
};
pub use config::{
    CheckEnvParams, CollideParams, ConfigError, ExperimentConfig, OutputParams, TailParams, ValleyParams,
};

/// Exit status of a run that passed.
pub const EXIT_PASS: i32 = 0;
/// A deterministic check failed, or the command could not run.
pub const EXIT_HARD_FAILURE: i32 = 1;
/// More statistical checks failed than the 1% budget allows.
pub const EXIT_STATISTICAL: i32 = 2;
/// Bad command line or configuration.
pub const EXIT_USAGE: i32 = 3;
