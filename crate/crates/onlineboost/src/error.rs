use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("dimension mismatch: expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter {name}: {msg}")]
    InvalidParam { name: &'static str, msg: String },

    #[error("invalid label {label}: labels must be integers in [0, {classes})")]
    UnknownLabel { label: String, classes: usize },

    #[error("unknown or already-deleted instance ids: {0:?}")]
    UnknownIds(Vec<u32>),

    #[error("model was exported without online state; only prediction is supported")]
    SlimModel,

    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u8),

    #[error("model file corrupt at offset {offset}: {msg}")]
    Corrupt { offset: u64, msg: String },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
