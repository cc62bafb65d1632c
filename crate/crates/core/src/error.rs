use thiserror::Error;

pub type Result<T, E = SplatError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplatError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate projection: |t'_w| = {0:e}")]
    DegenerateProjection(f64),

    #[error("point is behind the camera (t_z = {0})")]
    BehindCamera(f64),

    #[error("2D covariance is not positive definite (det = {0:e})")]
    DegenerateCovariance(f64),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("finite-difference probe returned a non-finite value at coordinate {coordinate}")]
    OracleFailure { coordinate: usize },

    #[error("loss became non-finite at iteration {iteration} ({value})")]
    NonFiniteLoss { iteration: usize, value: f64 },
}

impl SplatError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SplatError::InvalidInput(msg.into())
    }
}
