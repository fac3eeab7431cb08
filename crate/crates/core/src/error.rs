use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data (ragged days, price gaps, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Invalid argument to an operation (non-finite price, zero capacity, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A control action would leave the SoC bounds (strict stepping only).
    #[error("infeasible action: {0}")]
    InfeasibleAction(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
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

    /// Short machine-readable category, used for CLI exit codes and error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Data(_) | Error::Csv(_) => "data",
            Error::Input(_) => "input",
            Error::InfeasibleAction(_) => "infeasible",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "format",
        }
    }
}
