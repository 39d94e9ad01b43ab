use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("step size {h} does not divide integration time {t}")]
    StepDoesNotDivide { t: f64, h: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("unstable configuration: {0}")]
    Unstable(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{map} map solve did not converge after {iterations} iterations (best residual {residual:e})")]
    SolverFailed {
        map: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("exact flow failed: {0}")]
    ExactFlow(String),

    #[error("covariance is singular or not positive definite")]
    SingularCovariance,

    #[error("operation requires a quadratic potential")]
    NotQuadratic,

    #[error("quadrature did not reach tolerance: estimate {value}, error estimate {error:e}")]
    Quadrature { value: f64, error: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
