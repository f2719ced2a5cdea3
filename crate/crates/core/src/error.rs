use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("invalid shape for {op}: {reason}")]
    InvalidShape { op: &'static str, reason: String },
    #[error("{op}: non-positive input {value} in strict mode")]
    NonPositiveLog { op: &'static str, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("invalid configuration: {key} = {value}: {reason}")]
    InvalidConfig {
        key: String,
        value: String,
        reason: String,
    },
    #[error("missing gradient for parameter {0}")]
    MissingGradient(String),
    #[error("not a scalar loss: shape {0:?}")]
    NotScalar(Shape),
    #[error("transform not invertible: {0}")]
    Singular(String),
    #[error("transmission {value} below t_min {t_min}")]
    TransmissionTooLow { value: f64, t_min: f64 },
    #[error("checkpoint mismatch for {name}: expected {expected:?}, found {found:?}")]
    CheckpointMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("bad format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("frozen operator changed during training")]
    FrozenModified,
    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: &str, value: impl ToString, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.to_string(),
            value: value.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    /// Whether the failure comes from user input (config, flags, shapes of
    /// supplied data) rather than from the run itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig { .. }
                | Error::InvalidParameter { .. }
                | Error::Empty(_)
                | Error::CheckpointMismatch { .. }
                | Error::Image { .. }
                | Error::Format { .. }
                | Error::InvalidShape { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
