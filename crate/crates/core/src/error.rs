use std::fmt;
use std::io;

use crate::data::idx::IdxError;
use crate::tensor::TensorError;

#[derive(Debug)]
pub enum Error {
    Tensor(TensorError),
    /// A forward pass produced NaN or infinity.
    NonFinite { what: &'static str },
    /// A class label is outside `0..classes`.
    LabelOutOfRange { label: usize, classes: usize },
    /// Training produced a non-finite loss.
    Diverged {
        phase: u32,
        epoch: usize,
        component: &'static str,
    },
    InvalidArgument(String),
    Checkpoint(String),
    Idx(IdxError),
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Tensor(e) => write!(f, "{e}"),
            Error::NonFinite { what } => write!(f, "non-finite values in {what}"),
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::Diverged {
                phase,
                epoch,
                component,
            } => write!(
                f,
                "training diverged: non-finite {component} in phase {phase}, epoch {epoch}"
            ),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Checkpoint(msg) => write!(f, "checkpoint: {msg}"),
            Error::Idx(e) => write!(f, "{e}"),
            Error::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Tensor(e) => Some(e),
            Error::Idx(e) => Some(e),
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<TensorError> for Error {
    fn from(e: TensorError) -> Self {
        Error::Tensor(e)
    }
}

impl From<IdxError> for Error {
    fn from(e: IdxError) -> Self {
        Error::Idx(e)
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}

impl Error {
    /// Whether the failure is numeric (divergence, NaN) rather than usage or IO.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Diverged { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
