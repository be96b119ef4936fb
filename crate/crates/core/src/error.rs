use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A loss, gradient or ratio became NaN/Inf. `index` names the step or
    /// sample where it was first seen.
    #[error("numerical failure in {what} at index {index}")]
    NumericalFailure { what: &'static str, index: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::InvalidArgument(format!(
            "{what}: expected dimension {want}, got {got}"
        )));
    }
    Ok(())
}
