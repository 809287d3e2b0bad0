use thiserror::Error;

/// Errors raised by the safety-filter, dynamics and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("barrier gradient is singular at the obstacle center ({center:?})")]
    SingularGradient { center: [f64; 2] },

    #[error("filter constraint is active but its input gradient vanishes")]
    InfeasibleFilter,

    #[error("filter precondition violated: {0}")]
    FilterPrecondition(String),

    #[error("inertia matrix is numerically singular (condition number {condition:e})")]
    NumericalSingularity { condition: f64 },

    #[error("unsupported system for this controller: {0}")]
    UnsupportedSystem(String),

    #[error("invalid gains: {0}")]
    InvalidGains(String),

    #[error("dimension mismatch: expected {expected}, got {found} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("state became non-finite at step {step} (t = {time} s)")]
    Divergence { step: usize, time: f64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("scenario parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
