use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the attack laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A feature vector with zero norm cannot be normalized.
    #[error("undefined feature: zero-norm vector")]
    UndefinedFeature,

    #[error("zero-norm embedding")]
    ZeroNorm,

    /// The oracle refused a query because its budget is spent.
    #[error("query budget exhausted after {0} queries")]
    BudgetExhausted(usize),

    #[error("face mask is empty: the face lies outside the frame")]
    NoFace,

    #[error("malformed tensor file: {0}")]
    Format(String),

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

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
