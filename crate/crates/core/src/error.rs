use thiserror::Error;

#[derive(Debug, Error)]
pub enum MxError {
    #[error("shared exponent code 255 is the reserved NaN scale")]
    NanScale,

    #[error("non-finite element code {code:#04x} at position {position}")]
    NonFiniteElement { position: usize, code: u8 },

    #[error("non-finite input value at index {index}")]
    NonFiniteInput { index: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("expected {expected} elements, got {got}")]
    ElementCount { expected: usize, got: usize },

    #[error("format mismatch: expected {expected}, got {got}")]
    FormatMismatch { expected: String, got: String },

    #[error("accumulator saturated: exponent outside the internal range")]
    Saturated,

    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },

    #[error("invalid CSR write: {0}")]
    Csr(String),

    #[error("invalid workload: {0}")]
    Workload(String),

    #[error("malformed tensor file: {0}")]
    TensorFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MxError {
    /// True for errors that stem from numeric range limits rather than bad
    /// input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(self, MxError::Saturated)
    }
}

pub type Result<T> = std::result::Result<T, MxError>;
