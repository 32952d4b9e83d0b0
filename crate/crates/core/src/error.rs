//! Error type shared across the crate.

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Error, Debug)]
pub enum Error {
    /// Tensor/operand shapes do not agree.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A parameter is outside its legal domain (e.g. mask fraction > 1).
    #[error("domain error: {0}")]
    Domain(String),

    /// An API usage contract was violated (ordering, frozen/unfrozen, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// NaN/Inf detected in verification mode, or an invalid numeric state.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An embedding row collapsed below the norm floor.
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    /// Invalid model or experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset-level problem (labels out of range, empty split, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Task-level problem (e.g. fewer than two classes for classification).
    #[error("task error: {0}")]
    Task(String),

    /// Batch too small for the requested loss variant.
    #[error("batch-size error: {0}")]
    BatchSize(String),

    /// Malformed file. `offset` is the byte position where parsing failed.
    #[error("format error at byte {offset}: {msg}")]
    Format { msg: String, offset: u64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
