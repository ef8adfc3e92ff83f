use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not fit the operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A configuration value violates its constraint.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API precondition was not met by the caller.
    #[error("contract error: {0}")]
    Contract(String),

    #[error("degenerate batch: batch norm in train mode needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),

    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("unknown namespace: no parameter name starts with {0:?}")]
    UnknownNamespace(String),

    #[error("dataset error at {path}: {message}")]
    Dataset { path: PathBuf, message: String },

    #[error("empty manifest")]
    EmptyManifest,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("loss became non-finite; last good checkpoint: {}", last_good.display())]
    NanLoss { last_good: PathBuf },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn dataset(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Error::Dataset {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
