//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by scenario generation, allocation and training.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument was outside the mathematical domain of an operation.
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    /// Scenario generation could not satisfy a structural requirement
    /// within the bounded retry budget.
    #[error("scenario generation failed after {attempts} attempts: {msg}")]
    Generation { attempts: usize, msg: String },

    /// A sub-task was assigned to a server that never covers its owner.
    #[error("sub-task {subtask} assigned to satellite {satellite} with no coverage window")]
    NoCoverage { subtask: String, satellite: String },

    /// An iterative numeric routine failed to converge.
    #[error("numeric failure in {op}: {msg}")]
    Numeric { op: &'static str, msg: String },

    /// Tensor or layer shapes do not line up.
    #[error("shape mismatch in {op}: {msg}")]
    Shape { op: &'static str, msg: String },

    /// The brute-force oracle refused an instance it cannot enumerate.
    #[error("oracle refusal: {0}")]
    OracleRefusal(String),

    /// Training aborted (e.g. NaN loss); carries a description of the state.
    #[error("training aborted: {0}")]
    TrainingAborted(String),

    /// Configuration file or value problems.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain { op, msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
