//! Shared error type for the whole pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("numeric failure at epoch {epoch} step {step}: {msg}")]
    Numeric {
        epoch: usize,
        step: usize,
        msg: String,
    },

    #[error("softmax slice {slice} has every position masked")]
    AllMasked { slice: usize },

    #[error("cross-entropy batch has every row ignored")]
    EmptyBatch,

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("tag of {tag_len} tokens does not fit window length {window_len}")]
    TagOverflow { tag_len: usize, window_len: usize },

    #[error("cannot window an empty document")]
    EmptyDocument,

    #[error("gold span not aligned to token boundaries (doc {doc_id}, tag {tag_id})")]
    Alignment { doc_id: String, tag_id: u32 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint incompatible: {0}")]
    Incompatible(String),

    #[error("input error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for CLI use: 3 for numeric failures, 2 for data,
    /// format, and configuration problems. Usage errors (exit 1) are handled
    /// by the argument parser before any `Error` exists.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) | Error::Numeric { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
