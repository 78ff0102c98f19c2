use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImpsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ImpsError>;

impl From<ndarray_linalg::error::LinalgError> for ImpsError {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        ImpsError::Numerical(e.to_string())
    }
}

impl From<ndarray::ShapeError> for ImpsError {
    fn from(e: ndarray::ShapeError) -> Self {
        ImpsError::Dimension(e.to_string())
    }
}
