use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error at {node}: {message}")]
    Shape { node: String, message: String },

    #[error("leaf `{0}` is not bound")]
    UnboundLeaf(String),

    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value in gradient of `{0}`")]
    NonFinite(String),

    #[error("invalid weight-space spec: {0}")]
    InvalidSpec(String),

    #[error("invalid permutation for layer {layer}: {message}")]
    InvalidPermutation { layer: usize, message: String },

    #[error("group has {size} elements, exceeding the exhaustive limit of {limit}; use Monte Carlo mode (--mc N)")]
    GroupTooLarge { size: String, limit: u64 },

    #[error("null-space system has {unknowns} unknowns, exceeding the limit of {limit}")]
    SystemTooLarge { unknowns: usize, limit: usize },

    #[error("integer overflow during exact elimination")]
    Overflow,

    #[error("zero standard deviation at coordinate {0} and flooring is disabled")]
    ZeroStd(usize),

    #[error("training diverged (seed {seed}): {message}")]
    Diverged { seed: u64, message: String },

    #[error("capacity match impossible: target {target} parameters, closest achievable {closest}")]
    CapacityMismatch { target: usize, closest: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(node: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Shape {
            node: node.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
