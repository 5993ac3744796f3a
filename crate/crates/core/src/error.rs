use crate::se3::Frame;

/// Errors raised by the planning, control and simulation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix is not skew-symmetric (asymmetry {0:.3e})")]
    NotSkew(f64),
    #[error("matrix cannot be projected onto SO(3): {0}")]
    NotProjectable(String),
    #[error("rotation angle too close to pi for a stable logarithm")]
    LogSingular,
    #[error("frame mismatch: expected {expected:?}, got {found:?}")]
    FrameMismatch { expected: Frame, found: Frame },
    #[error("surface normal is parallel to gravity; horizontal surfaces are unsupported")]
    ParallelGravity,
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },
    #[error("invalid waypoints: {0}")]
    InvalidWaypoints(String),
    #[error("solver failed: {0}")]
    Infeasible(Box<crate::planner::InfeasibilityReport>),
    #[error("simulation diverged at t = {t:.3} s: {reason}")]
    Diverged { t: f64, reason: String },
    #[error("simulation aborted after {} records: {reason}", partial.records.len())]
    SimAborted {
        partial: Box<crate::sim::SimLog>,
        reason: Box<Error>,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("raster dimensions differ: {0:?} vs {1:?}")]
    RasterMismatch((usize, usize, f64), (usize, usize, f64)),
    #[error("stroke document error at `{field}`: {reason}")]
    Strokes { field: String, reason: String },
    #[error("record format error on line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
