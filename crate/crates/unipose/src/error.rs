use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward requires a scalar loss, got {0} elements")]
    NonScalarLoss(usize),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("checkpoint version mismatch: file has {found}, supported {supported}")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("checkpoint truncated: expected {expected} payload bytes, found {found}")]
    CheckpointTruncated { expected: usize, found: usize },

    #[error("annotation error at record {record}, field `{field}`: {message}")]
    Annotation {
        record: usize,
        field: String,
        message: String,
    },

    #[error("metric `{metric}` has an empty denominator (no counted joints)")]
    ZeroDenominator { metric: String },

    #[error("missing reference segment `{0}` required by the metric")]
    MissingReference(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("could not place figure within the frame after {0} attempts")]
    Placement(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used for process exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorCategory::Usage,
            Error::Io { .. } | Error::Image(_) => ErrorCategory::Io,
            Error::Annotation { .. }
            | Error::CheckpointFormat(_)
            | Error::CheckpointVersion { .. }
            | Error::CheckpointTruncated { .. } => ErrorCategory::Data,
            Error::Diverged { .. } | Error::NonFinite(_) => ErrorCategory::Numeric,
            _ => ErrorCategory::Internal,
        }
    }
}

/// Error categories, each mapped to a distinct nonzero exit code by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Io,
    Data,
    Numeric,
    Internal,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Usage => 2,
            ErrorCategory::Io => 3,
            ErrorCategory::Data => 4,
            ErrorCategory::Numeric => 5,
            ErrorCategory::Internal => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
