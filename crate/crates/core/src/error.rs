use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("invalid geometry for {id}: {reason}")]
    Geometry { id: String, reason: String },

    /// A design column is a linear combination of earlier columns.
    #[error("design matrix is rank deficient: column {column} depends on {depends_on:?}")]
    RankDeficient {
        column: String,
        depends_on: Vec<String>,
    },

    #[error("missing variables for specification {spec}: {names:?}")]
    MissingVariables { spec: String, names: Vec<String> },

    #[error("inconsistent keys: {0}")]
    KeyMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
