use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("comparison mismatch: {0}")]
    Comparison(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: parse error: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Comparison(_) => "comparison",
            Error::Io { .. } => "io",
            Error::Csv { .. } => "csv",
            Error::Parse { .. } => "parse",
        }
    }
}
