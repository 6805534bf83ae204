//! Independent reference computations: closed forms, linear solves,
//! brute-force stationary laws, tail and rate estimators, and the
//! statistical checks that tie simulations back to them.

mod calibration;
mod conditioned;
mod exit;
mod stationary;
mod tail;
mod verify;

use thiserror::Error;

pub use calibration::{
    annealed_hitting_time, first_ascent_time_calibration, invariant_sum_check, invariant_sum_of_path,
    ld_bound_check, AscentTimeCalibration, AscentTimePoint, InvariantSumReport, LdPoint,
};
pub use conditioned::{
    conditioned_law_tests, ConditionedLawReport, CorrelationCheck, KsCheck, SegmentFunctionals,
};
pub use exit::{
    exit_prob_bruteforce, exit_prob_exact, exit_prob_mc, exit_time_mc, expected_exit_time,
    expected_hitting_time, golosov_bounds, hitting_time_mc, ExitTimeReport, GolosovReport,
};
pub use stationary::{gth_stationary, stationary_bruteforce};
pub use tail::{
    first_excursion_height, sample_tail, sup_potential, tail_fit, TailEstimate, TailKind,
};
pub use verify::{verify, CheckKind, CheckRecord, VerifyBudget, VerifyReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("only {points} tail grid points above the 50/n floor; at least 5 are needed")]
    InsufficientTail { points: usize },
    #[error("rejection sampling gave up after {attempts} attempts")]
    RejectionBudgetExceeded { attempts: u64 },
}
