use thiserror::Error;

use crate::stepper::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{what} is not symmetric positive definite")]
    NotPositiveDefinite { what: String },

    #[error("singular solve in {what} (condition estimate {condition_estimate:e})")]
    SingularSolve {
        what: String,
        condition_estimate: f64,
    },

    #[error("{what} did not converge within {iterations} iterations (residual {residual:e})")]
    IterationLimit {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("supremum is unbounded above (iterate norm {iterate_norm:e})")]
    Unbounded { iterate_norm: f64 },

    #[error("non-finite value encountered in {what}")]
    NonFinite { what: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time {t} outside [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },

    #[error("step {step} failed: {source}")]
    StepFailure {
        step: usize,
        #[source]
        source: Box<Error>,
        partial: Box<Trajectory>,
    },

    #[error("energy-dissipation inequality violated on [{s}, {t}] (slack {slack:e}, tolerance {tolerance:e})")]
    EdiViolation {
        s: f64,
        t: f64,
        slack: f64,
        tolerance: f64,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::DimensionMismatch { expected, found })
    } else {
        Ok(())
    }
}
