use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions between buffers, networks or configs.
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Caller passed something outside an operation's domain.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("training diverged: {0}")]
    NonFinite(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("missing artifact {path}: {what}")]
    MissingArtifact { path: PathBuf, what: String },

    #[error("malformed config {path}: {message}")]
    MalformedConfig { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
