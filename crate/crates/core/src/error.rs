use thiserror::Error;

use crate::qcore::DissimilarityKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("cosine dissimilarity is undefined for a zero-norm vector")]
    ZeroNorm,

    #[error("correlation dissimilarity is undefined for a constant vector")]
    ConstantVector,

    #[error("{kind} dissimilarity cannot be applied to {found} points")]
    RepresentationMismatch {
        kind: DissimilarityKind,
        found: &'static str,
    },

    #[error("a path needs at least one edge")]
    EmptyPath,

    #[error("invalid q exponent {0}: expected a finite value >= 1 or infinity")]
    InvalidExponent(f64),

    #[error("invalid distance matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("duplicate point index {0}")]
    DuplicateIndex(usize),

    #[error("numeric failure: {0}")]
    NonFinite(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
