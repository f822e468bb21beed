use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the training and unlearning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("{path}: format error at byte {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("{path}: corrupt record at byte {offset}: {reason}")]
    CorruptRecord {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("invalid label {label}: {reason}")]
    InvalidLabel { label: u32, reason: String },

    #[error("class {0} has no samples")]
    MissingClass(u32),

    #[error("unknown class {0}")]
    UnknownClass(String),

    #[error("class {0} already removed")]
    AlreadyRemoved(String),

    #[error("numeric fault: {0}")]
    NumericFault(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("unsupported version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InvalidState(_) => "invalid_state",
            Error::Format { .. } => "format",
            Error::CorruptRecord { .. } => "corrupt_record",
            Error::InvalidLabel { .. } => "invalid_label",
            Error::MissingClass(_) => "missing_class",
            Error::UnknownClass(_) => "unknown_class",
            Error::AlreadyRemoved(_) => "already_removed",
            Error::NumericFault(_) => "numeric_fault",
            Error::Integrity(_) => "integrity",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
