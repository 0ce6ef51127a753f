//! Crate-wide error type.
//!
//! Variants map onto the process exit codes used by the CLI:
//! configuration problems exit 1, data problems exit 2, batch-exchange
//! timeouts exit 3.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by any stage of the cascade.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or missing configuration (bad pattern list, absent file, bad plan).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent data encountered while processing.
    #[error("data error: {0}")]
    Data(String),

    /// I/O failure with the offending path attached.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A batch response did not appear within the configured timeout.
    #[error("batch {batch_id} timed out after {seconds:.1}s")]
    Timeout { batch_id: String, seconds: f64 },

    /// A batch response omitted a requested sentence id.
    #[error("batch {batch_id}: response missing sentence id {sid}")]
    MissingSid { batch_id: String, sid: String },

    /// A batch response repeated a sentence id.
    #[error("batch {batch_id}: duplicate sentence id {sid}")]
    DuplicateSid { batch_id: String, sid: String },

    /// A label string outside the closed label set.
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
}

impl Error {
    /// Wrap an I/O error with its path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 protocol timeout.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Timeout { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
