use thiserror::Error;

pub type Result<T> = std::result::Result<T, DiffError>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiffError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op}: expected {expected} input channels, got {got}")]
    Channels {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: spatial size {h}x{w} must be even")]
    OddSize {
        op: &'static str,
        h: usize,
        w: usize,
    },
    #[error("{0}: empty input list")]
    Empty(&'static str),
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("backward has already been run on this tape")]
    BackwardTwice,
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
}
