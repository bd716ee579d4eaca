use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration for {op}: {detail}")]
    Config { op: &'static str, detail: String },

    #[error("backward already ran on this tape; record a new forward pass first")]
    StaleTape,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(TensorError::Shape {
        op,
        detail: detail.into(),
    })
}

pub(crate) fn config_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(TensorError::Config {
        op,
        detail: detail.into(),
    })
}
