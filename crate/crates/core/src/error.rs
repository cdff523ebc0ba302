use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failures raised by the estimation core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Vector or matrix shapes disagree with the model dimensions, or a
    /// caller broke a documented precondition (pinned entries, missing
    /// indicator responses, ...).
    Contract(String),
    /// Non-finite input or an invalid numeric domain (e.g. thresholds that
    /// are not strictly increasing).
    NumericDomain(String),
    /// A dataset failed validation.
    Schema(String),
    /// A value lies outside its admissible range.
    Range(String),
    /// Invalid argument to a pure operation (split fractions and the like).
    Argument(String),
    /// Inconsistent model specification.
    Config(String),
    /// Estimation could not produce a result.
    Estimation(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Contract(m) => write!(f, "contract violation: {m}"),
            Error::NumericDomain(m) => write!(f, "numeric domain error: {m}"),
            Error::Schema(m) => write!(f, "schema error: {m}"),
            Error::Range(m) => write!(f, "range error: {m}"),
            Error::Argument(m) => write!(f, "invalid argument: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Estimation(m) => write!(f, "estimation failed: {m}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
