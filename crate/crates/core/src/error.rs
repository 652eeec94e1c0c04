use thiserror::Error;

/// Errors shared by the numeric metric kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no motion: the speed curve is zero everywhere")]
    NoMotion,
    #[error("track set has no {0} points")]
    MissingRole(&'static str),
}

pub(crate) fn invalid(msg: impl Into<String>) -> MetricError {
    MetricError::InvalidInput(msg.into())
}
