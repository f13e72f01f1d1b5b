//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in this crate.
///
/// `Numeric` and `Train` indicate runtime numeric failures; every other
/// variant is a usage, data, or configuration problem. The CLI maps the two
/// groups to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimensions of two values that must agree do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An index is outside the valid range.
    #[error("index out of range: {0}")]
    Index(String),

    /// An argument value is outside its documented domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Data violates a structural invariant (bad probabilities, negative
    /// penalties, inconsistent class references, ...).
    #[error("validation failed: {0}")]
    Validation(String),

    /// A file could not be decoded. `locus` is a line number for text
    /// formats or a byte offset for binary ones.
    #[error("parse error in {path} at {locus}: {message}")]
    Parse {
        path: PathBuf,
        locus: String,
        message: String,
    },

    /// A file carries a container version this build does not understand.
    #[error("unsupported {what} version {found} (this build reads version {expected})")]
    UnsupportedVersion {
        what: &'static str,
        found: u64,
        expected: u64,
    },

    /// A numeric computation produced or met a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Optimization diverged.
    #[error("training diverged at iteration {iteration}: {message}")]
    Train { iteration: usize, message: String },

    /// A distance is undefined for the given inputs (empty point set).
    #[error("undefined distance: {0}")]
    Undefined(String),

    /// Bad run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A dataset directory or manifest is broken; names the sample involved.
    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numeric runtime rather than of usage/config.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::Train { .. })
    }
}
