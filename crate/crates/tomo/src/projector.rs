//! Ray-driven projector with linear interpolation (Joseph's method).
//!
//! Each ray is traversed along whichever image axis it is most aligned with.
//! At every pixel-centre line crossing, the two neighbouring pixels across
//! the other axis are linearly interpolated and weighted by the step length.
//! The transpose scatters with exactly the same weights.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Result, TomoError};
use crate::geometry::{Beam, ScanGeometry, ViewSubset};
use crate::Sinogram;

/// Backprojection partial sums are accumulated in this many fixed view
/// chunks so the result does not depend on the rayon thread count.
const BACKPROJECT_CHUNKS: usize = 16;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Ray {
    pub ox: f64,
    pub oy: f64,
    pub dx: f64,
    pub dy: f64,
}

impl ScanGeometry {
    /// Ray through detector cell `k` for view angle `angle`. Direction is unit length.
    pub(crate) fn ray(&self, angle: f64, k: usize) -> Ray {
        let (sin, cos) = angle.sin_cos();
        let s = self.det_coord(k);
        match self.beam() {
            Beam::Parallel => Ray {
                ox: s * cos,
                oy: s * sin,
                dx: -sin,
                dy: cos,
            },
            Beam::Fan => {
                let d_src = self.src_dist().unwrap_or(0.0);
                let d_det = self.det_dist().unwrap_or(0.0);
                let sx = d_src * cos;
                let sy = d_src * sin;
                // detector axis u = (-sin, cos), centre opposite the source
                let px = -d_det * cos - s * sin;
                let py = -d_det * sin + s * cos;
                let (vx, vy) = (px - sx, py - sy);
                let len = (vx * vx + vy * vy).sqrt();
                Ray {
                    ox: sx,
                    oy: sy,
                    dx: vx / len,
                    dy: vy / len,
                }
            }
        }
    }

    /// Visit `(pixel index, weight)` pairs of one ray.
    #[inline]
    pub(crate) fn for_each_weight(&self, ray: Ray, mut f: impl FnMut(usize, f64)) {
        let (m1, m2) = self.grid();
        let ps = self.pixel_size();
        let cr = 0.5 * (m1 as f64 - 1.0);
        let cc = 0.5 * (m2 as f64 - 1.0);
        if ray.dx.abs() >= ray.dy.abs() {
            let step = ps / ray.dx.abs();
            for j in 0..m2 {
                let x = (j as f64 - cc) * ps;
                let t = (x - ray.ox) / ray.dx;
                let y = ray.oy + t * ray.dy;
                let r = cr - y / ps;
                let i0 = r.floor();
                if i0 < -1.0 || i0 > m1 as f64 - 1.0 {
                    continue;
                }
                let w = r - i0;
                let i0 = i0 as isize;
                if i0 >= 0 {
                    f(i0 as usize * m2 + j, (1.0 - w) * step);
                }
                if i0 + 1 < m1 as isize {
                    f((i0 + 1) as usize * m2 + j, w * step);
                }
            }
        } else {
            let step = ps / ray.dy.abs();
            for i in 0..m1 {
                let y = (cr - i as f64) * ps;
                let t = (y - ray.oy) / ray.dy;
                let x = ray.ox + t * ray.dx;
                let c = x / ps + cc;
                let j0 = c.floor();
                if j0 < -1.0 || j0 > m2 as f64 - 1.0 {
                    continue;
                }
                let w = c - j0;
                let j0 = j0 as isize;
                if j0 >= 0 {
                    f(i * m2 + j0 as usize, (1.0 - w) * step);
                }
                if j0 + 1 < m2 as isize {
                    f(i * m2 + (j0 + 1) as usize, w * step);
                }
            }
        }
    }

    /// Forward projection of a row-major image onto the given views.
    /// `out` is `views.len() x n_det`, row-major.
    pub fn project_views(&self, x: &[f64], views: &[usize], out: &mut [f64]) {
        let n_det = self.n_det();
        assert_eq!(x.len(), self.n_pixels());
        assert_eq!(out.len(), views.len() * n_det);
        let angles = self.view_angles();
        out.par_chunks_mut(n_det)
            .zip(views.par_iter())
            .for_each(|(row, &v)| {
                let angle = angles[v];
                for (k, cell) in row.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    self.for_each_weight(self.ray(angle, k), |p, w| acc += w * x[p]);
                    *cell = acc;
                }
            });
    }

    /// Exact transpose of [`ScanGeometry::project_views`]. Overwrites `out`.
    pub fn back_project_views(&self, y: &[f64], views: &[usize], out: &mut [f64]) {
        let n_det = self.n_det();
        let n_pix = self.n_pixels();
        assert_eq!(y.len(), views.len() * n_det);
        assert_eq!(out.len(), n_pix);
        let angles = self.view_angles();
        let chunk = views.len().div_ceil(BACKPROJECT_CHUNKS).max(1);
        let partials: Vec<Vec<f64>> = views
            .par_chunks(chunk)
            .enumerate()
            .map(|(c, vs)| {
                let mut acc = vec![0.0; n_pix];
                for (local, &v) in vs.iter().enumerate() {
                    let row = &y[(c * chunk + local) * n_det..][..n_det];
                    for (k, &val) in row.iter().enumerate() {
                        if val == 0.0 {
                            continue;
                        }
                        self.for_each_weight(self.ray(angles[v], k), |p, w| acc[p] += w * val);
                    }
                }
                acc
            })
            .collect();
        out.fill(0.0);
        for part in &partials {
            for (o, p) in out.iter_mut().zip(part) {
                *o += p;
            }
        }
    }

    pub(crate) fn check_image(&self, x: &ArrayView2<f64>) -> Result<()> {
        let grid = self.grid();
        if x.dim() != grid {
            return Err(TomoError::Shape {
                expected: grid,
                got: x.dim(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_sinogram(&self, y: &Sinogram) -> Result<()> {
        self.check_subset(&y.views)?;
        let expected = (y.views.len(), self.n_det());
        if y.data.dim() != expected {
            return Err(TomoError::Shape {
                expected,
                got: y.data.dim(),
            });
        }
        Ok(())
    }

    /// Line integrals of `x` along every ray of the selected views.
    pub fn forward_project(&self, x: ArrayView2<f64>, views: &ViewSubset) -> Result<Sinogram> {
        self.check_image(&x)?;
        self.check_subset(views)?;
        let x = x.as_standard_layout();
        let mut out = Sinogram::zeros(views.clone(), self.n_det());
        self.project_views(
            x.as_slice().expect("standard layout"),
            views.indices(),
            out.data.as_slice_mut().expect("fresh array"),
        );
        Ok(out)
    }

    /// Unfiltered backprojection: the exact adjoint of [`ScanGeometry::forward_project`].
    pub fn back_project(&self, y: &Sinogram) -> Result<Array2<f64>> {
        self.check_sinogram(y)?;
        let data = y.data.as_standard_layout();
        let mut out = Array2::zeros(self.grid());
        self.back_project_views(
            data.as_slice().expect("standard layout"),
            y.views.indices(),
            out.as_slice_mut().expect("fresh array"),
        );
        Ok(out)
    }
}
