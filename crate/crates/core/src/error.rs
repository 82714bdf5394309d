// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty vector")]
    EmptyVector,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid site {0}")]
    InvalidSite(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("search aborted at step {step}: non-finite loss")]
    SearchAborted { step: usize },
    #[error("unknown group id {0}")]
    UnknownGroup(usize),
    #[error("universe of {0} groups is too large for exhaustive enumeration")]
    UniverseTooLarge(usize),
    #[error("degenerate centroid pair ({0}, {1})")]
    DegenerateCentroids(usize, usize),
    #[error("missing {0}")]
    Missing(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(alloc::format!($($arg)*)) };
}
macro_rules! invalid {
    ($($arg:tt)*) => { $crate::error::Error::InvalidArgument(alloc::format!($($arg)*)) };
}
pub(crate) use invalid;
pub(crate) use shape_err;
