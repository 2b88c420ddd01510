use std::fmt;

/// Error type shared by every module of the crate.
#[derive(Debug)]
pub enum SimError {
    /// A precondition on the arguments was violated.
    InvalidArgument(String),
    /// An iterative routine produced non-finite values.
    NumericalFailure { iteration: usize, detail: String },
    /// An operator or callback broke a stated contract (e.g. self-adjointness).
    ContractViolation(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// A file did not match the expected on-disk format.
    Format(String),
}

pub type SimResult<T> = Result<T, SimError>;

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            SimError::NumericalFailure { iteration, detail } => {
                write!(f, "numerical failure at iteration {iteration}: {detail}")
            }
            SimError::ContractViolation(msg) => write!(f, "contract violation: {msg}"),
            SimError::Io(err) => write!(f, "i/o error: {err}"),
            SimError::Format(msg) => write!(f, "format error: {msg}"),
        }
    }
}

impl std::error::Error for SimError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            SimError::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for SimError {
    fn from(err: std::io::Error) -> Self {
        SimError::Io(err)
    }
}
