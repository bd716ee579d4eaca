use std::path::PathBuf;

use fpnr_tensor::TensorError;
use thiserror::Error;

/// Failures decoding or encoding an image file.
#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{path}: malformed header: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },
    #[error("{path}: dimensions {width}x{height} overflow the addressable size")]
    DimensionOverflow {
        path: PathBuf,
        width: u64,
        height: u64,
    },
    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{path}: unsupported image format")]
    UnsupportedFormat { path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Failures reading or writing a model checkpoint.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u8),
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("checkpoint header invalid: {0}")]
    Header(String),
    #[error("tensor {name} has shape {found:?}, architecture expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {0} missing from checkpoint")]
    MissingTensor(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum FpnrError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("roughness undefined for an all-zero image")]
    UndefinedRoughness,
    #[error("no usable source images: {0}")]
    EmptyDataset(String),
    #[error("non-finite loss at batch {batch} (learning rate {lr})")]
    NonFiniteLoss { batch: usize, lr: f64 },
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        source: serde_json::Error,
    },
}

impl FpnrError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FpnrError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        FpnrError::Json {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, FpnrError>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(FpnrError::Config(msg.into()))
}
