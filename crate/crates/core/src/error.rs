use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("degenerate batch: train-mode batch norm needs at least 2 rows, got {0}")]
    DegenerateBatch(usize),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{0}")]
    Usage(String),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{0}")]
    Format(#[from] FormatError),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Failures while decoding a binary feature file or checkpoint.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    Magic { expected: [u8; 4], found: Vec<u8> },

    #[error("unsupported version {0}")]
    Version(u32),

    #[error("truncated file: need {needed} bytes, have {available}")]
    Truncated { needed: u64, available: u64 },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(u64),

    #[error("corrupt header: {0}")]
    Header(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("label {label} at row {row} is out of range for k={k}")]
    LabelOutOfRange { row: usize, label: u32, k: u32 },
}

impl Error {
    pub fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }

    /// Process exit code for the CLI: 1 usage, 2 data/format, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::Parse { .. } => 1,
            Error::Format(_) | Error::Validation(_) | Error::Io(_) | Error::Shape { .. } => 2,
            Error::Domain(_) | Error::State(_) | Error::DegenerateBatch(_) => 3,
        }
    }
}
