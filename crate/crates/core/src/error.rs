use thiserror::Error;

/// Errors raised by the filter and its building blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate particle set: total weight is {0}")]
    DegenerateWeights(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("instance too large to enumerate: {configurations} configurations (limit {limit})")]
    TooLarge { configurations: f64, limit: f64 },

    #[error("limit oracle did not converge: {0}")]
    NoConvergence(String),

    #[error("frame parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("scenario validation failed: {0}")]
    Scenario(String),
}

pub type Result<T> = std::result::Result<T, Error>;
