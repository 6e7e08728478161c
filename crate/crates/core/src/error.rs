use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("coefficient positivity violated: {0}")]
    PositivityViolation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("line search failed after {halvings} step reductions (iteration {iteration})")]
    StepFailure { iteration: usize, halvings: usize },

    #[error("dense system of dimension {dimension} exceeds the limit of {limit}")]
    DimensionGuard { dimension: usize, limit: usize },

    #[error("singular system: {0}")]
    SingularSystem(String),
}

/// Returns `DimensionMismatch` unless `got == expected`.
pub(crate) fn check_dim(what: &str, got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{what}: got {got}, expected {expected}"
        )))
    }
}
