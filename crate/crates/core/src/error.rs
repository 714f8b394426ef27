use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied parameters (bad grid, empty basis, out-of-range alpha, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller broke an operation's precondition (dimension mismatch, zero field, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Linear algebra or arithmetic failure.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A trajectory left the finite range; `step` is the offending time index.
    #[error("blow-up at step {step} (t = {time})")]
    BlowUp { step: usize, time: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
