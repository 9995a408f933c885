use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("spawn region holds at most {capacity} vehicles, {requested} requested")]
    SpawnCapacity { requested: usize, capacity: usize },

    #[error("cannot step a terminal state ({0:?})")]
    TerminalState(crate::sim::TerminalCause),

    #[error("template `{template}`: {reason}")]
    Template { template: String, reason: String },

    #[error("gateway: {0}")]
    Gateway(String),

    #[error("training aborted: {0}")]
    TrainingAborted(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
