use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cell ({age}, {time}) is outside the {n_ages} x {n_times} grid")]
    InvalidIndex {
        age: usize,
        time: usize,
        n_ages: usize,
        n_times: usize,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },

    #[error("data integrity: {0}")]
    DataIntegrity(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 is a usage problem, 3 a problem with the input data, 4 a bug.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidIndex { .. }
            | Error::InvalidGrid(_)
            | Error::InvalidPrior(_)
            | Error::InvalidConfig(_)
            | Error::Contract(_) => 2,
            Error::DimensionMismatch(_)
            | Error::InvalidRecord { .. }
            | Error::DataIntegrity(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::Csv(_) => 3,
            Error::Invariant(_) => 4,
        }
    }
}
