//! Error type shared across the toolkit.

/// Errors produced by the pipeline stages.
///
/// Variants group by failure domain so the CLI can map them onto its
/// documented exit codes (data 2, numeric 3, label 4, input 5, mode 6).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("wav: {0}")]
    Wav(String),

    /// Dataset-level problems: invalid roots, empty corpora, bad manifests.
    #[error("data: {0}")]
    Data(String),

    /// Structured-text parse failures, reported with a line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Non-finite values or failed numeric contracts.
    #[error("numeric: {0}")]
    Numeric(String),

    /// Label-set mismatches between checkpoints and manifests.
    #[error("label: {0}")]
    Label(String),

    /// Configuration schema violations.
    #[error("config: {0}")]
    Config(String),

    /// Operation requested in an unsupported mode (e.g. filter analysis on a
    /// mel checkpoint).
    #[error("mode: {0}")]
    Mode(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    /// Stable CLI exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Data(_) => 2,
            Error::Numeric(_) => 3,
            Error::Label(_) => 4,
            Error::Io(_) | Error::Wav(_) | Error::Parse { .. } => 5,
            Error::Config(_) | Error::Checkpoint(_) => 5,
            Error::Mode(_) => 6,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
