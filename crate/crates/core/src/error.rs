use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic bytes {found:?} at byte offset 0, expected \"FSOS\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported format version {found} at byte offset 4, expected {expected}")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error(
        "file truncated: header promises {expected} records but record {record} is incomplete at byte offset {offset}"
    )]
    Truncated { record: u64, expected: u64, offset: u64 },

    #[error("payload length mismatch: {extra} unexpected trailing bytes after byte offset {offset}")]
    TrailingBytes { offset: u64, extra: u64 },

    #[error("payload checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("non-finite value in vector {index}, component {component}")]
    NonFinite { index: usize, component: usize },

    #[error("label {label} of vector {index} is out of range for {classes} classes")]
    LabelOutOfRange { index: usize, label: u32, classes: u32 },

    #[error("class {class} has no vectors")]
    EmptyClass { class: usize },

    #[error("invalid metadata: {0}")]
    Metadata(String),

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate input: vector lies within {norm:e} of the centering point")]
    Degenerate { norm: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical divergence at step {step}: {what}")]
    Divergence { step: usize, what: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("method {method} failed on episode {episode}: {source}")]
    Method {
        method: String,
        episode: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Divergence { .. } => 4,
            Error::Method { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
