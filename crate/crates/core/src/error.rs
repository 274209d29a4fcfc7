use mvms_diffcore::DiffError;
use mvms_tomo::TomoError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tomo(#[from] TomoError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("invalid network dimensions: {0}")]
    Dims(String),
    #[error("view count {q1} is already registered with a different geometry or subset")]
    GeometryConflict { q1: usize },
    #[error("input has {got} channels, the network expects {expected}")]
    Channels { expected: usize, got: usize },
    #[error("sinogram shape {got:?} does not match geometry ({n_det} detectors)")]
    SinogramShape { got: (usize, usize), n_det: usize },
    #[error("image shape {got:?} does not match grid {expected:?}")]
    ImageShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("schedule view count {0} is not registered")]
    UnregisteredSchedule(usize),
    #[error("loss became non-finite ({value}) at step {step} (view count {view_count})")]
    NonFiniteLoss {
        step: u64,
        view_count: usize,
        value: f64,
    },
    #[error("max_iters must be at least 1")]
    NoIterations,
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error("ssim: {0}")]
    Ssim(String),
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
