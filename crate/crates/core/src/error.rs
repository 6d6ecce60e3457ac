use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("AR coefficients are not stable (spectral radius {spectral_radius:.12})")]
    Unstable { spectral_radius: f64 },

    #[error("Lyapunov system is singular")]
    LyapunovSingular,

    #[error("matrix is singular or rank deficient: {0}")]
    Singular(String),

    #[error("lifted second moment is not positive definite (min eigenvalue {eig_min:e}, tolerance {tolerance:e})")]
    NotPositiveDefinite { eig_min: f64, tolerance: f64 },

    #[error("numerical guard exceeded: {0}")]
    GuardExceeded(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("training diverged at epoch {epoch} (loss {loss:e})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
