use thiserror::Error;

/// Errors produced by the solvers, mechanisms and harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A data point broke the declared bounds of its loss.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("sample budget exhausted: requested {requested} more draw(s) with {used} of {budget} used")]
    BudgetExhausted { requested: usize, used: usize, budget: usize },

    #[error("instance too small: {0}")]
    InstanceTooSmall(String),

    /// Importance weighting an arm that has zero probability.
    #[error("degenerate weight: group {index} has zero probability")]
    DegenerateWeight { index: usize },

    #[error("no convergence after {iterations} iterations (best certified bound {best_bound:e})")]
    NonConvergence { iterations: usize, best_bound: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
