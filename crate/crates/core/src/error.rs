//! Error type shared across the crate.

use crate::tensor::Shape;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors fed to `op` had incompatible extents.
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    /// An argument violated an operation's contract (zero window, even probe
    /// size, non-bijective permutation, ...).
    #[error("{op}: {reason}")]
    InvalidArg { op: &'static str, reason: String },

    /// Malformed or inconsistent external data (IDX files, checkpoints,
    /// plan files, configs).
    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Numeric breakdown: non-finite losses, degenerate probe responses,
    /// probe energy reaching the measurement border.
    #[error("{0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArg {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn shapes(op: &'static str, left: Shape, right: Shape) -> Self {
        Error::ShapeMismatch { op, left, right }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
