use thiserror::Error;

/// Errors raised by the simulation and verification layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric positive semidefinite: {0}")]
    NotPsd(String),

    #[error("empty family: {0}")]
    EmptyFamily(String),

    #[error("non-finite functional values on {excluded} of {total} paths (law {law_id})")]
    NonFiniteValues {
        law_id: usize,
        excluded: usize,
        total: usize,
    },

    #[error("simulation diverged on law {law_id}, path {path_index} at step {step}")]
    Diverged {
        law_id: usize,
        path_index: u64,
        step: usize,
    },

    #[error("sequence is not monotone: {0}")]
    NotMonotone(String),

    #[error("tolerance breach: {0}")]
    Tolerance(String),

    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
