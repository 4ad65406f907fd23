use std::path::PathBuf;

/// Errors raised anywhere in the forecasting pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("no data: {0}")]
    EmptyData(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}: ragged row {row}: expected {expected} fields, found {found}", path.display())]
    RaggedRow {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("{}: row {row}, column {col}: cannot parse {value:?} as a number", path.display())]
    NonNumeric {
        path: PathBuf,
        row: usize,
        col: usize,
        value: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("transport error talking to {endpoint}: {detail}")]
    Transport { endpoint: String, detail: String },

    #[error("{endpoint} answered with HTTP status {status}")]
    HttpStatus { endpoint: String, status: u16 },

    #[error("zero denominator: {0}")]
    ZeroDenominator(String),

    #[error("malformed payload: {0}")]
    Protocol(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint fingerprint {found} does not match config fingerprint {expected}")]
    Fingerprint { expected: String, found: String },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 runtime, 2 config/input, 3 transport.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::EmptyData(_)
            | Error::MissingFile(_)
            | Error::RaggedRow { .. }
            | Error::NonNumeric { .. }
            | Error::Fingerprint { .. }
            | Error::Checkpoint(_) => 2,
            Error::Transport { .. } | Error::HttpStatus { .. } | Error::Protocol(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
