use thiserror::Error;

pub type Result<T> = std::result::Result<T, TomoError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TomoError {
    #[error("detector reaches {reach:.4} mm from the rotation centre but the image support radius is {radius:.4} mm")]
    Coverage { reach: f64, radius: f64 },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("view count {q1} outside 1..={n_views}")]
    ViewCount { q1: usize, n_views: usize },
    #[error("invalid view subset: {0}")]
    InvalidSubset(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("geometry is parallel-beam and has no source/detector distances")]
    NotFanBeam,
    #[error("relative perturbation {0} exceeds 0.05")]
    Perturbation(f64),
    #[error("grid of {0} pixels is too large for a dense system matrix (limit 4096)")]
    OracleTooLarge(usize),
    #[error("geometry config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("unknown geometry preset `{0}`")]
    UnknownPreset(String),
}
