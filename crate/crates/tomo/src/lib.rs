//! Tomographic operators for 2D sparse-view CT.
//!
//! [`ScanGeometry`] describes a parallel- or fan-beam acquisition on a square
//! pixel grid. On top of it this crate provides:
//!
//! - a ray-driven (Joseph) forward projector and its exact transpose,
//! - Ram-Lak filtered backprojection and the transpose of that linear map,
//! - linear interpolation of a sparse sinogram onto the full view set,
//! - a dense system-matrix builder used as a test oracle on small grids.
//!
//! Images are `m1 x m2` arrays (row 0 at the top), sinograms are
//! `q1 x n_det` arrays tagged with the [`ViewSubset`] they were sampled on.

mod config;
mod error;
mod fbp;
mod geometry;
mod oracle;
mod projector;
mod upsample;

pub use config::GeometryConfig;
pub use error::{Result, TomoError};
pub use fbp::ramp_kernel;
pub use geometry::{Beam, ScanGeometry, ViewSubset};
pub use upsample::ViewInterpolation;

use ndarray::Array2;

/// Projection data bound to the view subset it was acquired on.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub data: Array2<f64>,
    pub views: ViewSubset,
}

impl Sinogram {
    pub fn zeros(views: ViewSubset, n_det: usize) -> Self {
        Sinogram {
            data: Array2::zeros((views.len(), n_det)),
            views,
        }
    }

    pub fn n_views(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_det(&self) -> usize {
        self.data.ncols()
    }
}
