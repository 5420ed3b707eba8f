use std::io;

use thiserror::Error;

/// Every failure the codec, its file formats, and the metrics can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point is too close to the sensor origin to project")]
    ZeroRange,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("quantization precision {0} is outside [1e-4, 0.5]")]
    InvalidPrecision(f64),
    #[error("corrupt stream: {0}")]
    CorruptStream(String),
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("no weight bundle registered for digest {0}")]
    UnknownWeights(String),
    #[error("weight shape mismatch: {0}")]
    WeightShapeMismatch(String),
    #[error("temporal prediction needs a previous frame")]
    NoPreviousFrame,
    #[error("frame header requires a previous frame but none was supplied")]
    MissingPreviousFrame,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("frame has no valid points")]
    ZeroPoints,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("sidecar: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptStream(msg.into())
}
