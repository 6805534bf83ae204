//! Shared fixtures for the criterion benches.

use std::sync::Arc;

use rwre_core::env_model::{EnvDistribution, Environment};
use rwre_core::valleys::{census_with_growth, ValleyRecord, ValleySchedule};

/// The two-point law `ω ∈ {1/4, 3/4}` with `P(ω = 1/4) = 0.3`.
pub fn reference_law() -> Arc<EnvDistribution> {
    Arc::new(EnvDistribution::two_point(0.25, 0.75, 0.3, 0.25).expect("valid law"))
}

pub fn reference_env(seed: u64) -> Environment {
    Environment::from_shared(reference_law(), seed)
}

/// The deepest non-degenerate valley among the first `i_max` of `env`.
pub fn sample_valley(env: &Environment, i_max: usize) -> ValleyRecord {
    let sched = ValleySchedule::for_distribution(env.dist(), 0.1, 1.0, 1.0, None).expect("valid schedule");
    let (_, census) = census_with_growth(env, &sched, i_max, 1024, 1 << 14, 1 << 22);
    census
        .records
        .into_iter()
        .rev()
        .find(|r| !r.is_degenerate() && r.c >= r.a + 2)
        .expect("a non-degenerate valley")
}
