//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown layer: {0}")]
    UnknownLayer(String),

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("label too long for T: need at least {required} frames, got {frames}")]
    LabelTooLong { frames: usize, required: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("token id {id} out of range (vocab {vocab})")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
}
