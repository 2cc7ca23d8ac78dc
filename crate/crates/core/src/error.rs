//! Crate-wide error type.

use crate::ids::PointId;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A file does not conform to its declared format (bad header, wrong
    /// magic, malformed row).
    #[error("format error: {0}")]
    Format(String),

    /// Input values violate a data invariant (non-finite entry, zero-norm
    /// row, probability row off the simplex, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Matrix or vector dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Not enough points of a concept to satisfy a split request.
    #[error("capacity error: concept {concept}: need {needed}, have {available}")]
    Capacity {
        concept: String,
        needed: usize,
        available: usize,
    },

    /// A referenced point id does not exist.
    #[error("unknown point id {0}")]
    UnknownId(PointId),

    /// An argument violates a precondition.
    #[error("argument error: {0}")]
    Argument(String),

    /// A numerical operation failed (non-positive-definite pivot, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An external provider executable failed.
    #[error("provider error: {0}")]
    Provider(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
