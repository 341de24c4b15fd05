use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: argument outside domain ({detail})")]
    Domain { op: &'static str, detail: String },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this tape; record a new forward pass first")]
    BackwardTwice,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        last_finite: Box<crate::checkpoint::Checkpoint>,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}, row {row}: {msg}")]
    Manifest {
        path: PathBuf,
        row: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
