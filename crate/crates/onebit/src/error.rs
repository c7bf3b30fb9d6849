//! Crate-wide error type for fallible boundaries (I/O, configuration,
//! dataset parsing, model files, training divergence).
//!
//! Programmer errors such as shape mismatches panic instead; see the
//! individual operation docs.

/// Errors returned by fallible operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration value or unknown key/variant name.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset file malformed or inconsistent with its declared layout.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Underlying filesystem failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Model graph construction rejected the requested architecture.
    #[error("model error: {0}")]
    Model(String),

    /// Model file does not start with the expected magic bytes.
    #[error("bad magic: not a model file")]
    BadMagic,

    /// Model file was written by an unsupported format version.
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),

    /// Model file ended before the declared contents.
    #[error("truncated model file")]
    Truncated,

    /// Model file contents malformed beyond magic/version/length issues.
    #[error("model format error: {0}")]
    Format(String),

    /// Stored checksum does not match the file contents.
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    /// Batch-statistic layer used in inference before finalization.
    #[error("batch statistics not finalized (norm slot {0})")]
    NotFinalized(usize),

    /// Training produced a non-finite loss, or non-finite parameters or
    /// statistics after finalization.
    #[error("training diverged at epoch {epoch}, step {step}: non-finite values")]
    Divergence { epoch: usize, step: usize },

    /// A verification harness (e.g. the gradient suite) found a failure.
    #[error("verification failed: {0}")]
    Verification(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code class for this error.
    ///
    /// 2 = usage/config, 3 = I/O or malformed data, 4 = divergence,
    /// 5 = verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_)
            | Error::Dataset(_)
            | Error::Model(_)
            | Error::BadMagic
            | Error::UnsupportedVersion(_)
            | Error::Truncated
            | Error::Format(_)
            | Error::Checksum { .. }
            | Error::NotFinalized(_) => 3,
            Error::Divergence { .. } => 4,
            Error::Verification(_) => 5,
        }
    }
}
