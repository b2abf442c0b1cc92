use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid sizes, ranges, or missing fields in a user-supplied configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated a function contract (shape mismatch, out-of-range argument).
    #[error("contract violation: {0}")]
    Contract(String),

    /// No policy satisfies the cost threshold.
    #[error("infeasible constraint: threshold {threshold} is below the minimum achievable cost {min_cost}")]
    Infeasible { threshold: f64, min_cost: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    /// Dataset generation could not satisfy the requested composition.
    #[error("data generation error: {0}")]
    Generation(String),

    /// Non-finite loss or gradient during optimisation.
    #[error("training error at step {step}: {message}")]
    Training { step: usize, message: String },

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
