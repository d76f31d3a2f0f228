use thiserror::Error;

/// Errors produced by the tracking core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("projected point lies on the camera plane (|depth| = {depth:e})")]
    DepthDegenerate { depth: f64 },
    #[error("homography is singular")]
    SingularHomography,
    #[error("image point maps to infinity on the ground plane")]
    PointAtInfinity,
    #[error("invalid calibration for camera {camera_id}: {reason}")]
    InvalidCalibration { camera_id: u32, reason: &'static str },
    #[error("invalid grid: {0}")]
    InvalidGrid(&'static str),
    #[error("channel count {0} is not divisible by 6")]
    ChannelsNotDivisible(usize),
    #[error("cell ({row}, {col}) is outside the {rows}x{cols} grid")]
    CellOutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("channel mismatch: {left} vs {right}")]
    ChannelMismatch { left: usize, right: usize },
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("token count mismatch: {tokens} tokens vs {rows} attended rows")]
    CountMismatch { tokens: usize, rows: usize },
    #[error("shape mismatch: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    ShapeMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("innovation covariance is singular")]
    SingularCovariance,
    #[error("kalman covariance lost positive-definiteness")]
    NumericalBreakdown,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("ground truth is empty")]
    EmptyGroundTruth,
}

pub type Result<T> = core::result::Result<T, Error>;
