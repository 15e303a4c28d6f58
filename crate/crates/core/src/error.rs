use thiserror::Error;

/// Errors raised while building or fitting sparse additive models.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("predictor has fewer than two distinct values")]
    DegeneratePredictor,

    #[error(
        "block for predictor {predictor} is not positive definite even after jitter {jitter:e}"
    )]
    SingularBlock { predictor: usize, jitter: f64 },

    #[error("binary response must contain both classes")]
    DegenerateLabels,

    #[error("response is identically zero after centering; lambda1_max is 0")]
    DegenerateResponse,

    #[error("initial model has no active components to adapt")]
    EmptyModel,

    #[error("holdout set is empty")]
    EmptyHoldout,

    #[error("model document is invalid: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the error stems from caller-supplied data rather than an
    /// internal numerical failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::SingularBlock { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
