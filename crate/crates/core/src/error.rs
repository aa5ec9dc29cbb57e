use thiserror::Error;

/// Errors raised by the models, solvers and the learning loop.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed environment at (s={state}, a={action}): {detail}")]
    MalformedEnvironment {
        state: usize,
        action: usize,
        detail: String,
    },

    #[error("{what} did not converge after {iterations} iterations (last change {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("improper instance: {0}")]
    ImproperInstance(String),

    #[error("confidence set and validity polytope are disjoint (gap {gap:e})")]
    Infeasible { gap: f64 },

    #[error("feasibility search stalled with gap {gap:e} after {iterations} iterations")]
    FeasibilityStalled { gap: f64, iterations: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
