use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("data error: {0}")]
    Data(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("non-finite value at index {index}: {what}")]
    NonFinite { index: usize, what: String },

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("lasso failure: {0}")]
    Lasso(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data rather than numerical failure.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Data(_)
                | Error::Dimension(_)
                | Error::UnknownColumn(_)
                | Error::Config(_)
                | Error::Io { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::InvalidArgument(_)
                | Error::UnknownStrategy { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
