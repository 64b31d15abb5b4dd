//! Error type shared by every module in the crate.

use alloc::string::String;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Failure modes of the training core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor shapes do not line up; names both offending shapes.
    ShapeMismatch(String),
    /// An argument is outside the mathematical domain of the operation.
    Domain(String),
    /// User-provided data is invalid (token ids, dimensions, ranges).
    Input(String),
    /// An API was called against its usage contract (mismatched tape,
    /// missing optimizer state, config/store mismatch).
    Usage(String),
    /// A numeric result left the finite range (NaN/Inf), with the tensor
    /// or step that produced it.
    NonFinite(String),
    /// A serialized blob has the wrong magic, version, or structure.
    Format(String),
    /// A serialized blob has the wrong length for its declared contents.
    Length(String),
    /// A data source is too small for the requested operation.
    Capacity(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch(m) => write!(f, "shape mismatch: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Input(m) => write!(f, "input error: {m}"),
            Error::Usage(m) => write!(f, "usage error: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Length(m) => write!(f, "length error: {m}"),
            Error::Capacity(m) => write!(f, "capacity error: {m}"),
        }
    }
}

impl core::error::Error for Error {}
