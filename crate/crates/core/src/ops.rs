//! Tomographic operators wrapped as [`LinearOp`]s so gradients can flow
//! through them. Images are `[1, m1, m2]`, sinograms `[1, views, n_det]`.

use std::sync::Arc;

use mvms_diffcore::{LinearOp, Tensor};
use mvms_tomo::{ScanGeometry, ViewInterpolation, ViewSubset};
use ndarray::{Array2, ArrayView2};

use crate::error::{CoreError, Result};

fn image_shape(g: &ScanGeometry) -> [usize; 3] {
    let (m1, m2) = g.grid();
    [1, m1, m2]
}

/// Ray-driven projection onto a list of views; transpose is backprojection.
pub struct Project {
    geom: Arc<ScanGeometry>,
    views: Vec<usize>,
}

impl Project {
    pub fn new(geom: Arc<ScanGeometry>, views: &ViewSubset) -> Self {
        Project {
            geom,
            views: views.indices().to_vec(),
        }
    }
}

impl LinearOp for Project {
    fn input_shape(&self) -> [usize; 3] {
        image_shape(&self.geom)
    }
    fn output_shape(&self) -> [usize; 3] {
        [1, self.views.len(), self.geom.n_det()]
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.geom.project_views(x, &self.views, out);
    }
    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        self.geom.back_project_views(y, &self.views, out);
    }
    fn name(&self) -> &str {
        "project"
    }
}

/// Ram-Lak filtered backprojection over a list of views.
pub struct Fbp {
    geom: Arc<ScanGeometry>,
    views: Vec<usize>,
}

impl Fbp {
    pub fn new(geom: Arc<ScanGeometry>, views: &ViewSubset) -> Self {
        Fbp {
            geom,
            views: views.indices().to_vec(),
        }
    }
}

impl LinearOp for Fbp {
    fn input_shape(&self) -> [usize; 3] {
        [1, self.views.len(), self.geom.n_det()]
    }
    fn output_shape(&self) -> [usize; 3] {
        image_shape(&self.geom)
    }
    fn apply(&self, y: &[f64], out: &mut [f64]) {
        self.geom.fbp_views(y, &self.views, out);
    }
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        self.geom.fbp_transpose_views(x, &self.views, out);
    }
    fn name(&self) -> &str {
        "fbp"
    }
}

/// Picks the subset rows out of a full-view sinogram.
pub struct SelectRows {
    rows: Vec<usize>,
    n_full: usize,
    n_det: usize,
}

impl SelectRows {
    pub fn new(views: &ViewSubset, n_det: usize) -> Self {
        SelectRows {
            rows: views.indices().to_vec(),
            n_full: views.n_full(),
            n_det,
        }
    }
}

impl LinearOp for SelectRows {
    fn input_shape(&self) -> [usize; 3] {
        [1, self.n_full, self.n_det]
    }
    fn output_shape(&self) -> [usize; 3] {
        [1, self.rows.len(), self.n_det]
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n_det;
        for (dst, &r) in out.chunks_mut(n).zip(&self.rows) {
            dst.copy_from_slice(&x[r * n..][..n]);
        }
    }
    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        let n = self.n_det;
        out.fill(0.0);
        for (src, &r) in y.chunks(n).zip(&self.rows) {
            out[r * n..][..n].copy_from_slice(src);
        }
    }
    fn name(&self) -> &str {
        "select_rows"
    }
}

/// View-axis interpolation from the subset onto every view.
pub struct Upsample {
    interp: ViewInterpolation,
}

impl Upsample {
    pub fn new(geom: &ScanGeometry, views: &ViewSubset) -> Result<Self> {
        Ok(Upsample {
            interp: ViewInterpolation::new(geom, views)?,
        })
    }
}

impl LinearOp for Upsample {
    fn input_shape(&self) -> [usize; 3] {
        [1, self.interp.n_sparse(), self.interp.n_det()]
    }
    fn output_shape(&self) -> [usize; 3] {
        [1, self.interp.n_full(), self.interp.n_det()]
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.interp.apply(x, out);
    }
    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        self.interp.apply_transpose(y, out);
    }
    fn name(&self) -> &str {
        "upsample"
    }
}

/// Apply a [`LinearOp`] outside any tape.
pub fn apply_op(op: &dyn LinearOp, x: &Tensor) -> Tensor {
    let mut out = vec![0.0; op.output_shape().iter().product()];
    op.apply(x.data(), &mut out);
    Tensor::new(op.output_shape().to_vec(), out).expect("operator output shape")
}

/// `[1, m1, m2]` tensor from a 2D array.
pub fn image_to_tensor(x: ArrayView2<f64>) -> Tensor {
    let (h, w) = x.dim();
    Tensor::image(h, w, x.iter().copied().collect()).expect("h * w elements")
}

/// 2D array from a `[1, H, W]` tensor.
pub fn tensor_to_image(t: &Tensor) -> Result<Array2<f64>> {
    match t.chw() {
        Some((1, h, w)) => {
            Ok(Array2::from_shape_vec((h, w), t.data().to_vec()).expect("h * w elements"))
        }
        _ => Err(CoreError::Channels {
            expected: 1,
            got: t.shape().first().copied().unwrap_or(0),
        }),
    }
}
