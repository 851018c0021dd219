use thiserror::Error;

#[derive(Debug, Error)]
pub enum PatError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical instability: non-finite value detected at step {step}")]
    NumericalInstability { step: i64 },

    #[error("dense assembly refused: {n_in} x {n_out} entries exceeds the limit of {limit}")]
    SizeGuard { n_in: usize, n_out: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, PatError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(PatError::InvalidArgument(msg.into()))
}
