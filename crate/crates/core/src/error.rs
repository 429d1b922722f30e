use thiserror::Error;

use crate::family::FamilyKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{kind} log-partition evaluated outside its domain at u = {value}")]
    Domain { kind: FamilyKind, value: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("infeasible starting point: {0}")]
    InfeasibleStart(String),

    #[error("ground-truth parameters are infeasible: {0}")]
    InfeasibleTruth(String),

    #[error("no basis met the coherence band after {draws} draws")]
    RejectionBudgetExceeded { draws: usize },

    #[error("poisson conditional rate exp({log_rate}) exceeds the sampler cap")]
    RateOverflow { log_rate: f64 },

    #[error("{failed} of {total} subsample fits failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}
