//! Error type shared by every module of the crate.

use alloc::string::String;
use core::fmt;

/// Convenience alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Everything that can go wrong in the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands disagree on shape.
    ShapeMismatch {
        /// Operation that detected the mismatch.
        op: &'static str,
        /// Shape that was expected.
        expected: String,
        /// Shape that was found.
        found: String,
    },
    /// A parameter is outside its valid domain.
    InvalidArgument(String),
    /// Class index is not below the class count.
    ClassOutOfRange {
        /// Requested class.
        class: usize,
        /// Number of classes of the model.
        num_classes: usize,
    },
    /// A gradient or objective value became NaN or infinite.
    NonFinite {
        /// What was being computed.
        what: &'static str,
        /// Iteration (or step) index where it happened.
        iteration: usize,
    },
    /// Training loss turned NaN.
    Diverged {
        /// Epoch where the loss stopped being finite.
        epoch: usize,
    },
    /// Dataset passed to the trainer is empty.
    EmptyDataset,
    /// Weight buffer could not be decoded.
    WeightFormat(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch {
                op,
                expected,
                found,
            } => {
                write!(
                    f,
                    "{op}: shape mismatch, expected {expected}, found {found}"
                )
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::ClassOutOfRange { class, num_classes } => {
                write!(f, "class {class} out of range for {num_classes} classes")
            }
            Error::NonFinite { what, iteration } => {
                write!(f, "non-finite {what} at iteration {iteration}")
            }
            Error::Diverged { epoch } => write!(f, "training diverged at epoch {epoch}"),
            Error::EmptyDataset => f.write_str("dataset is empty"),
            Error::WeightFormat(msg) => write!(f, "bad weight buffer: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn shape_err(op: &'static str, expected: &[usize], found: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        expected: alloc::format!("{expected:?}"),
        found: alloc::format!("{found:?}"),
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
