//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Two objects that must agree in dimension do not.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    /// A function probe returned a non-finite value.
    #[error("non-finite value encountered in {context}{}", at.as_ref().map(|a| format!(" at {a}")).unwrap_or_default())]
    NonFinite {
        context: String,
        at: Option<String>,
    },

    /// An argument was outside its admissible range.
    #[error("invalid argument {name}: {reason}")]
    InvalidArgument { name: String, reason: String },

    /// A model invariant was violated (e.g. a variance floor breached).
    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    /// A smoothness constant cannot be computed for this architecture.
    #[error("no smoothness constant available: {0}")]
    NoSmoothnessConstant(String),

    /// All importance weights underflowed to zero.
    #[error("degenerate importance weights: all log-weights are -inf")]
    DegenerateWeights,

    /// IO/CSV error.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// CSV parse error.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// JSON (de)serialization error.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            got,
        }
    }

    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name: name.into(),
            reason: reason.into(),
        }
    }
}
