//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid thresholds on axis {axis}: {reason}")]
    InvalidThresholds { axis: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("axis {axis} underpopulated: {got} points kept, need at least {need}")]
    AxisUnderpopulated { axis: usize, got: usize, need: usize },

    #[error("cell cardinality mismatch on axis pair (true {true_axis}, pred {pred_axis}): {true_k} vs {pred_k}")]
    CardinalityMismatch {
        true_axis: usize,
        pred_axis: usize,
        true_k: usize,
        pred_k: usize,
    },

    #[error("map is not axis-respecting: {0}")]
    NotAxisRespecting(String),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
