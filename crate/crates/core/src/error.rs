use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument violates an operation's precondition.
    InvalidInput(String),
    /// A configuration value is out of its legal range.
    InvalidConfig(String),
    /// Training or evaluation data is malformed.
    InvalidData(String),
    /// Internal bookkeeping was asked to do something inconsistent, e.g. a
    /// duplicate prototype key.
    InvalidState(String),
    /// Cosine similarity against a zero vector.
    UndefinedSimilarity,
    /// A metric whose denominator vanished.
    UndefinedMetric(String),
    /// A loss evaluated to a non-finite value.
    /// A loss evaluated to a non-finite value; `step` is the global optimizer
    /// step when known.
    Divergence { value: f64, step: Option<usize> },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::InvalidData(msg) => write!(f, "invalid data: {msg}"),
            Error::InvalidState(msg) => write!(f, "invalid state: {msg}"),
            Error::UndefinedSimilarity => f.write_str("cosine similarity is undefined for a zero vector"),
            Error::UndefinedMetric(msg) => write!(f, "undefined metric: {msg}"),
            Error::Divergence { value, step: Some(step) } => write!(f, "training diverged at step {step} (loss = {value})"),
            Error::Divergence { value, step: None } => write!(f, "training diverged (loss = {value})"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err($crate::error::Error::$variant(alloc::format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
