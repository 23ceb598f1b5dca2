use thiserror::Error;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch on {axis} axis in {op}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid dims {dims:?}: {reason}")]
    InvalidDims { dims: Vec<usize>, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl TensorError {
    pub(crate) fn mismatch(
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    ) -> Self {
        TensorError::ShapeMismatch {
            op,
            axis,
            expected,
            actual,
        }
    }

    /// Whether this error is a violated shape or configuration contract
    /// (as opposed to malformed input data).
    pub fn is_contract_violation(&self) -> bool {
        matches!(
            self,
            TensorError::ShapeMismatch { .. }
                | TensorError::InvalidDims { .. }
                | TensorError::Config(_)
        )
    }
}

impl From<std::io::Error> for TensorError {
    fn from(e: std::io::Error) -> Self {
        TensorError::Io(e.to_string())
    }
}
