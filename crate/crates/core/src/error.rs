//! Error type shared by every module of the crate.

use std::io;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed file (bad magic, unsupported version, truncated data).
    #[error("format error: {0}")]
    Format(String),

    /// A value violates a data-model invariant.
    #[error("validation error: {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("merge error: {0}")]
    Merge(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("sequence length {len} exceeds max_seq {max}")]
    Length { len: usize, max: usize },

    #[error("mask error: {0}")]
    Mask(String),

    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("classifications are not comparable: {0}")]
    Comparability(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than internal faults.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Training { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
