use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index out of range: {what} = {index} (must be < {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("channel generation failed: matrix [{rx}][{tx}] exceeded the condition cap after {attempts} draws")]
    GenerationFailure { rx: usize, tx: usize, attempts: usize },

    #[error("singular matrix encountered: {0}")]
    Singular(String),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("eigenvalue gap {gap:e} below tolerance {tol:e}")]
    EigenGap { gap: f64, tol: f64 },

    #[error("interference spans {rank} dimensions at receiver {receiver}; at most {max} allowed")]
    AlignmentFailed { receiver: usize, rank: usize, max: usize },

    #[error("empty nullspace at receiver {0}")]
    EmptyNullspace(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{bits} bits is above the explicit codebook cap of {cap}")]
    CodebookTooLarge { bits: u32, cap: u32 },

    #[error("zero matrix cannot be quantized")]
    ZeroMatrix,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
