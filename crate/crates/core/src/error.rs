//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad ranges, ratios, dimensions).
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid input data (non-finite values, shape mismatches, out-of-range intervals).
    #[error("validation error: {0}")]
    Validation(String),

    /// Binary container format violation (bad magic, truncated file, dim overflow).
    #[error("format error: {0}")]
    Format(String),

    /// Manifest parse failure, with the 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Cosine similarity requested on a (near-)zero-norm vector.
    #[error("numeric guard: {0}")]
    NumericGuard(String),

    /// Checkpoint version byte does not match this build.
    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    Version { found: u16, expected: u16 },

    /// Training clip shorter than the minimum window length.
    #[error("clip too short: {0}")]
    ClipTooShort(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 for validation-class errors, 2 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            _ => 1,
        }
    }
}
