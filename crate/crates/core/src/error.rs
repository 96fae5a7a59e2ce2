use thiserror::Error;

/// Errors raised by the receiver and simulation components.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported constellation or labeling: {0}")]
    UnsupportedConstellation(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("covariance matrix is not positive definite (even after diagonal loading)")]
    NotPositiveDefinite,
    #[error("demapper LUT rows are not monotone in v_e (worst violation {0:.4})")]
    NonMonotoneLut(f64),
    #[error("LUT mismatch: {0}")]
    LutMismatch(String),
    #[error("EXIT grid too sparse: {0} points (need at least 5)")]
    SparseGrid(usize),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
