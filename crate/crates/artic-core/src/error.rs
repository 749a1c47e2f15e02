//! Crate-wide error type.
//!
//! The variants map onto the CLI exit-code contract: configuration problems
//! (exit 2), data/format/I-O problems (exit 3) and numeric failures (exit 4).

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration: bad dimensions, unknown keys, out-of-range
    /// hyperparameters, mismatched model/stack combinations.
    #[error("config error: {0}")]
    Config(String),

    /// Invalid data: shape mismatches, non-finite values, degenerate inputs,
    /// out-of-range labels, dangling manifest entries.
    #[error("data error: {0}")]
    Data(String),

    /// Malformed file contents (bad magic, truncation, size mismatch).
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Underlying I/O failure, annotated with the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Numeric failure: non-finite loss, non-SPD system, residual bound
    /// violation.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Speaker adaptation problems (unknown speaker id, no LHUC layers).
    #[error("adaptation error: {0}")]
    Adaptation(String),

    /// Invariant violations that indicate a bug rather than bad input.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
