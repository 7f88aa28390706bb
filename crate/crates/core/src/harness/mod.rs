//! Simulation and statistics harness.

pub mod codes;
pub mod oracle;
pub mod sampling;
pub mod stats;

use thiserror::Error;

use crate::model::TemplateError;

pub use oracle::{oracle_decode, oracle_solve, OracleSolution, MAX_ORACLE_EVENTS};
pub use sampling::{detection_fraction, sample_shots, Sampler, ShotSample};
pub use stats::{
    compute_lambda, fit_epsilon, logical_error_after, one_point_epsilon, FitPoint, FitResult,
    LambdaResult,
};

#[derive(Debug, Error, PartialEq)]
pub enum HarnessError {
    #[error("empty sample set")]
    EmptyInput,
    #[error("cycle count must be at least one")]
    ZeroCycles,
    #[error("logical error probability {0} outside [0, 0.5)")]
    LogicalErrorOutOfRange(f64),
    #[error("no fit point has p_L below 0.5")]
    NoUsablePoints,
    #[error("need at least two distinct distances, got {0}")]
    TooFewDistances(usize),
    #[error("epsilon at distance {0} is not positive")]
    NonPositiveEpsilon(u32),
    #[error(transparent)]
    Template(#[from] TemplateError),
}
