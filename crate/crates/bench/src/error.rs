use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] mvms_core::CoreError),
    #[error(transparent)]
    Tomo(#[from] mvms_tomo::TomoError),
    #[error("invalid grid {0}x{1}")]
    Grid(usize, usize),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("dynamic range {0} must be positive")]
    Range(f64),
    #[error("regularisation weight {0} must be positive")]
    Lambda(f64),
    #[error("unknown variant {0:?}, expected one of a..g")]
    Variant(String),
    #[error("unknown phantom kind {0:?}")]
    PhantomKind(String),
    #[error("tensor file: {0}")]
    Format(String),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;
