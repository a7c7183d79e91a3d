//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate gradient: {0}")]
    DegenerateGradient(&'static str),

    #[error("all input vectors were dropped; basis would be empty")]
    EmptyBasis,

    #[error("target coupling of ±1 is degenerate (parallel gradients)")]
    DegenerateCoupling,

    #[error("empty mini-batch")]
    EmptyBatch,

    #[error("operation not valid on branch {0}")]
    InvalidBranch(&'static str),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    #[error("dimension {0} exceeds the dense-audit limit of {1}")]
    UnsupportedDimension(usize, usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in vector entries")]
    NonFinite,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
