//! Unfolded sparse-view CT reconstruction.
//!
//! Each stage turns the current image into a stack of projection-domain
//! error images ([`refine`]), then maps the stack back to an image with a
//! multigrid-style correction network ([`msgc`]). [`model`] chains the
//! stages and runs plug-and-play continuation, [`train`] fits the shared
//! parameters with Adam on an l1 + SSIM objective, and [`checkpoint`]
//! stores everything in a small little-endian binary format.

pub mod adam;
pub mod checkpoint;
mod error;
pub mod loss;
pub mod model;
pub mod msgc;
pub mod ops;
pub mod refine;
pub mod train;

pub use error::{CoreError, Result};
pub use model::{ModelConfig, MvmsModel, PnpSignal, PnpTrajectory};
pub use msgc::{param_count, MsgcDims, MsgcParams};
pub use refine::{Channel, ChannelSet, StageContext, Variant, ViewOps};
