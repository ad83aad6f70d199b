//! Error types shared across the crate.

use thiserror::Error;

/// Failure reported by a model or scoring backend.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// Network or server-side failure; the call may succeed if repeated.
    #[error("transport failure: {0}")]
    Transport(String),
    /// The server answered with something that does not follow the protocol.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// The request itself is invalid (unknown token, context overflow, ...).
    #[error("invalid input: {0}")]
    Input(String),
    /// The capability is not configured.
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid strategy: {0}")]
    Strategy(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
