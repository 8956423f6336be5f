use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A shape had a zero extent or its element count overflowed.
    #[error("size error: {0}")]
    Size(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    /// Malformed labels, targets or sample sets.
    #[error("data error: {0}")]
    Data(String),

    /// An operation was called out of order, e.g. backward before forward.
    #[error("state error: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("unsupported format in {path}: {reason}")]
    UnsupportedFormat { path: String, reason: String },

    #[error("decode error in {path}: {reason}")]
    Decode { path: String, reason: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error in section `{section}`: {reason}")]
    Checkpoint { section: String, reason: String },

    #[error("metrics error at line {line}: {reason}")]
    Metrics { line: u64, reason: String },

    #[error("I/O error on {path}: {source}")]
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

    pub(crate) fn checkpoint(section: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Checkpoint {
            section: section.into(),
            reason: reason.into(),
        }
    }
}
