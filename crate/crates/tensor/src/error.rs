use thiserror::Error;

use crate::Shape;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("backward requires a scalar loss of shape (1, 1, 1, 1), got {0}")]
    NonScalarLoss(Shape),

    #[error("backward was already run on this graph; call reset_grads first")]
    BackwardAlreadyRun,

    #[error("batch_norm: degenerate batch statistics ({0} element per channel in training mode)")]
    DegenerateStatistics(usize),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(TensorError::ShapeMismatch { op, detail: detail.into() })
}

pub(crate) fn arg_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(TensorError::InvalidArgument { op, detail: detail.into() })
}
