use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid model, grid or run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// A linear-algebra step broke down.
    #[error("numerical error in {step}: {message}")]
    Numerical { step: String, message: String },

    /// A non-finite value appeared in a named ELBO term.
    #[error("non-finite ELBO term `{term}`: {value}")]
    NonFiniteTerm { term: &'static str, value: f64 },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("checkpoint {path} failed verification: {message}")]
    Corruption { path: PathBuf, message: String },

    #[error("refusing to run: {0}")]
    Budget(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn numerical(step: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numerical {
            step: step.into(),
            message: message.into(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
