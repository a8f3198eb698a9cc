//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value left the mathematical domain of an operation (e.g. a point on
    /// or outside the ball boundary).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("cluster has no candidates")]
    EmptyCluster,

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    /// Malformed input file; `offset` is the byte position of the problem.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },

    /// File is shorter (or longer) than its own header declares.
    #[error("checksum/length mismatch: expected {expected} bytes, got {got}")]
    ChecksumMismatch { expected: u64, got: u64 },

    #[error("unsupported format version {got} (expected {expected})")]
    VersionMismatch { expected: u32, got: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    /// Every invalid field found in one pass, not just the first.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("inconsistent architecture: {0}")]
    InconsistentArch(String),

    /// Backward was called without a cached training-mode forward.
    #[error("stale cache: backward called without a training-mode forward")]
    StaleCache,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 = property/numerical failure,
    /// 2 = configuration error, 3 = IO/parse failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_)
            | Error::Json(_)
            | Error::Parse { .. }
            | Error::ChecksumMismatch { .. }
            | Error::VersionMismatch { .. }
            | Error::CorruptCheckpoint(_) => 3,
            _ => 1,
        }
    }
}
