//! Quenched simulation of independent walkers, the reflected chain on a
//! valley and the coupling of a free walker with a stationary reflected one.

mod coupling;
mod ensemble;
mod reflected;

use thiserror::Error;

pub use coupling::{
    confinement_check, couple, couple_with_measure, occupation_probability, ContractReport,
    CouplingOptions, CouplingRun,
};
pub use ensemble::{
    exit_time, hitting_time, hitting_time_after, run, MeetingLog, RunOptions, TrajectorySummary,
};
pub use reflected::{reflected_invariant_measure, InvariantMeasure, ReflectedEnv};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WalkerError {
    #[error("starting sites {0:?} do not share a parity class")]
    MixedParity(Vec<i64>),
    #[error("at least one walker is required")]
    NoWalkers,
    #[error("interval [{a}, {c}] is too short for the reflected chain")]
    DegenerateInterval { a: i64, c: i64 },
    #[error("site {site} cannot be reached from {start} in exactly {steps} steps")]
    ParityMismatch { start: i64, site: i64, steps: u64 },
}

/// One nearest-neighbour step: `+1` when the uniform falls below `ω`.
#[inline]
pub(crate) fn step_from(pos: i64, omega: f64, u: f64) -> i64 {
    if u < omega {
        pos + 1
    } else {
        pos - 1
    }
}

#[inline]
pub(crate) fn same_parity(a: i64, b: i64) -> bool {
    (a - b).rem_euclid(2) == 0
}
