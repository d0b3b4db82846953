use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HydraError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HydraError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op} expects rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("index {index} out of range for {what} (size {size})")]
    Index {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("loss mask selects no cells")]
    EmptyLoss,

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("malformed dependency structure: {0}")]
    Structural(String),

    #[error("sequence of length {len} exceeds limit {max}")]
    Length { len: usize, max: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("incompatible components: {0}")]
    Compatibility(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Failures while decoding a checkpoint byte stream.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u8, expected: u8 },
    #[error("truncated stream: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("header disagrees with payload: {0}")]
    HeaderMismatch(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
}

impl HydraError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HydraError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        HydraError::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
