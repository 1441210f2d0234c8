use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor or parameter block has the wrong shape.
    #[error("dimension mismatch in {layer}: expected {expected}, got {got}")]
    Dimension {
        layer: String,
        expected: String,
        got: String,
    },

    /// Caller-supplied data violates an operation's precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// An invariant between cooperating internal values was broken.
    #[error("internal error: {0}")]
    Internal(String),

    /// A non-finite value appeared where a finite one is required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("malformed file at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn dim(layer: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            layer: layer.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
