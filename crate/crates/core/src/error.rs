use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A rate or weight left the open positive orthant where H and its
    /// gradient are defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("policy table has no entry for configuration {0}")]
    PolicyIncomplete(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite gradient at client {client}, step {step}: {detail}")]
    NonFiniteGradient {
        client: usize,
        step: usize,
        detail: String,
    },

    #[error("availability model is not enumerable by the rate-region oracle: {0}")]
    UnsupportedOracle(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

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

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
