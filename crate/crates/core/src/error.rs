use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FinoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FinoError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("episode {id} unusable: {reason}")]
    EpisodeUnusable { id: String, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("ingestion error in {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },
    #[error("split error: {0}")]
    Split(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FinoError {
    pub fn dim(msg: impl Into<String>) -> Self {
        FinoError::Dimension(msg.into())
    }

    pub fn param(msg: impl Into<String>) -> Self {
        FinoError::Parameter(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        FinoError::Contract(msg.into())
    }

    pub fn unusable(id: impl Into<String>, reason: impl Into<String>) -> Self {
        FinoError::EpisodeUnusable {
            id: id.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FinoError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by input data rather than numerics or usage.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            FinoError::Input(_)
                | FinoError::EpisodeUnusable { .. }
                | FinoError::Ingestion { .. }
                | FinoError::Io { .. }
                | FinoError::Split(_)
                | FinoError::Checkpoint(_)
        )
    }

    pub fn is_numerical_error(&self) -> bool {
        matches!(self, FinoError::NonFinite(_) | FinoError::Diverged { .. })
    }
}
