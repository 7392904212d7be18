use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum FracError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("domain hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("suite failure: {0}")]
    SuiteFailure(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FracError {
    /// Process exit status associated with this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            FracError::InvalidInput(_)
            | FracError::Hypothesis(_)
            | FracError::HashMismatch { .. }
            | FracError::Malformed(_)
            | FracError::Json(_) => 2,
            FracError::Numerical(_) => 3,
            FracError::SuiteFailure(_) => 4,
            FracError::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, FracError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(FracError::InvalidInput(msg.into()))
}

pub fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0 && sigma < 2.0) {
        return invalid(format!("sigma must lie in the open interval (0,2), got {sigma}"));
    }
    Ok(())
}
