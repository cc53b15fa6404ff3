//! Error type shared by every module in the engine.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    /// A vector whose L2 norm is at or below the zero tolerance was passed
    /// to an operation that must divide by that norm.
    #[error("cannot normalize a zero vector (L2 norm {norm:e} <= {epsilon:e})")]
    ZeroVector { norm: f64, epsilon: f64 },

    /// Two vectors (or a vector and a configured dimension) disagree.
    #[error("dimension mismatch in {context}: {left} vs {right}")]
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    /// The dataset cannot support the requested batch/instance construction.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// An identity label that does not exist in the dataset.
    #[error("unknown identity {0:?}")]
    UnknownIdentity(String),

    /// A retrieval query whose gallery contains no relevant item; average
    /// precision is undefined for it.
    #[error("query {query_index} has no relevant gallery item")]
    NoRelevantItems { query_index: usize },

    /// A frame stream shorter than the minimum detection window.
    #[error("stream too short: {frames} frame(s), need at least {min_frames}")]
    StreamTooShort { frames: usize, min_frames: usize },

    /// A structurally valid but semantically impossible configuration.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A malformed data record or file.
    #[error("malformed data: {0}")]
    MalformedData(String),
}
