use alloc::string::String;

/// Errors raised by tensor operations, the attention modules and model
/// assembly.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible. `detail` names the offending axes.
    #[error("{op}: dimension mismatch: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A NaN or infinity reached an operation that refuses it.
    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },

    /// A documented precondition does not hold (e.g. unnormalized rows).
    #[error("{op}: contract violation: {detail}")]
    Contract { op: &'static str, detail: String },

    /// Model or dataset configuration is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Dimension {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn contract_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Contract {
        op,
        detail: detail.into(),
    }
}
