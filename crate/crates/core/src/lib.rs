//! Random walks in one-dimensional i.i.d. random environments: potentials,
//! valley decompositions, coupled walkers and Monte Carlo oracles.

pub mod env_model;
pub mod harness;
pub mod numeric;
pub mod oracles;
pub mod potential;
pub mod rng;
pub mod stats;
pub mod valleys;
pub mod walker_sim;

pub use env_model::{
    check_assumptions, rate_function, sample_env, solve_kappa, AssumptionReport, EnvDistribution,
    EnvError, EnvMoments, Environment, KappaSolution, MirroredField, SiteCache, SiteField,
    TabulatedField,
};
pub use potential::{
    first_ascent, hit_level_set, ladder, left_ascent, potential, Direction, FirstAscent,
    LadderDecomposition, LevelSet, PotentialError, PotentialPath,
};
pub use rng::{Role, StreamKey};
pub use valleys::{
    deep_valley_indices, locate_valley, locate_valleys, schedule, DeepValleyIndex, OmegaFlags,
    ScheduleEntry, ValleyCensus, ValleyError, ValleyRecord, ValleySchedule,
};
pub use harness::{ExperimentConfig, Harness};
