use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("training failed at iteration {iteration}: {message}")]
    Training { iteration: u64, message: String },

    #[error("non-deterministic loss: {0}")]
    Determinism(String),

    #[error("manifest validation failed: {0}")]
    Validation(String),

    #[error("format error in {path} at byte {offset}: {message}")]
    Format { path: String, offset: u64, message: String },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("semantic bank alignment failed: {0}")]
    Alignment(String),

    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// True when the failure came from the filesystem rather than from content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
