//! Error type shared across the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input shapes or lengths do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A value left its mathematical domain (negative sigma, NaN activation, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The caller asked for something the inputs cannot provide.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A method was configured against a network that cannot serve it.
    #[error("configuration error: {0}")]
    Config(String),

    /// Training diverged (NaN/inf loss).
    #[error("numeric divergence: {0}")]
    Divergence(String),

    /// Text formats: dataset CSV, prediction CSV, checkpoints, manifests.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
