use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutogradError {
    #[error("{op}: shape mismatch {shapes:?}")]
    ShapeMismatch { op: &'static str, shapes: Vec<Vec<usize>> },
    #[error("{op}: invalid argument: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("backward: output must be a scalar, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("backward: differentiation target #{index} is not reachable from the output")]
    Unreachable { index: usize },
    #[error("backward: differentiation target #{index} does not require grad")]
    NotDifferentiable { index: usize },
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    #[error("{op}: tensors belong to different graphs or a graph that was reset")]
    GraphMismatch { op: &'static str },
}

pub type Result<T> = std::result::Result<T, AutogradError>;

pub(crate) fn shape_err<T>(op: &'static str, shapes: &[&[usize]]) -> Result<T> {
    Err(AutogradError::ShapeMismatch { op, shapes: shapes.iter().map(|s| s.to_vec()).collect() })
}

pub(crate) fn arg_err<T>(op: &'static str, reason: impl Into<String>) -> Result<T> {
    Err(AutogradError::InvalidArgument { op, reason: reason.into() })
}
