use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Non-finite or otherwise invalid numeric input to the dynamics.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller broke a documented precondition (shape or length mismatch, empty input).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite loss at step {step} of scenario {scenario}")]
    NonFiniteLoss { scenario: usize, step: usize },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Dataset(#[from] DatasetError),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes (expected AWMC)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("truncated checkpoint while reading {what}")]
    Truncated { what: &'static str },
    #[error("shape mismatch for tensor {name}: file has {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("unexpected tensor {0} in checkpoint")]
    UnexpectedTensor(String),
    #[error("malformed checkpoint metadata: {0}")]
    Metadata(String),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset file is empty (missing header line)")]
    MissingHeader,
    #[error("unsupported dataset schema version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("malformed record for scenario {index}: {reason}")]
    Record { index: usize, reason: String },
}
