//! Shared error type for the whole library.

use alloc::string::String;
use core::fmt;

/// Library-wide error. Variants follow the kind of contract that was
/// violated so callers can map them to exit codes or messages uniformly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Tensor shapes or dimensions do not line up.
    Shape(String),
    /// A hyperparameter or argument is outside its valid range.
    Parameter(String),
    /// An index (token id, class target, row) is out of range.
    Index(String),
    /// Input data is empty, inconsistent, or otherwise unusable.
    Data(String),
    /// A label string does not map to any of the five classes.
    Label(String),
    /// A serialized artifact (vocab file, model file, TSV) failed to parse.
    Parse(String),
    /// A loss or activation became NaN or infinite.
    NonFinite(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Parameter(msg) => write!(f, "parameter error: {msg}"),
            Error::Index(msg) => write!(f, "index error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Label(msg) => write!(f, "label error: {msg}"),
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
