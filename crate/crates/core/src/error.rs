use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("grid points must be strictly increasing (violated at index {index})")]
    NonMonotoneGrid { index: usize },
    #[error("grid needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("non-finite grid entry at index {0}")]
    NonFiniteEntry(usize),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLengthMismatch { expected: usize, got: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("scheme unavailable: {0}")]
    SchemeUnavailable(String),
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("observation depth {0} is not a grid point")]
    ObservationOffGrid(f64),
    #[error("training diverged at epoch {0}")]
    DivergedTraining(usize),
    #[error("shared parameters required: {0}")]
    SharingRequired(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
