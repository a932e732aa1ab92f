use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected dimension {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("configuration key `{key}` expects {expected}, got `{value}`")]
    BadValue {
        key: String,
        expected: &'static str,
        value: String,
    },
    #[error("episode finished")]
    EpisodeFinished,
    #[error("action id {0} out of range")]
    InvalidAction(usize),
    #[error("{what} is not a probability simplex (sum = {sum})")]
    NotSimplex { what: &'static str, sum: f64 },
    #[error("non-finite {what} at index {index}")]
    NonFinite { what: String, index: usize },
    #[error("rollout buffer is empty")]
    EmptyBuffer,
    #[error("training aborted: {reason} (checkpoint written to {checkpoint:?})")]
    TrainingAborted {
        reason: String,
        checkpoint: Option<PathBuf>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}:{line}: {message}")]
    Malformed { path: String, line: usize, message: String },
    #[error("image: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by the user's configuration rather than by a run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::UnknownKey(_) | Error::BadValue { .. }
        )
    }
}
