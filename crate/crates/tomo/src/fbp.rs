//! Ram-Lak filtered backprojection.
//!
//! `fbp = B_w . R . W` where `W` is the (fan-beam) cosine pre-weight, `R`
//! filters every view with the band-limited ramp and `B_w` is a pixel-driven
//! weighted backprojection. Each factor is linear and `R` is symmetric, so
//! the transpose is `W . R . B_w^T`.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::Result;
use crate::geometry::{Beam, ScanGeometry, ViewSubset};
use crate::Sinogram;

/// Spatial Ram-Lak kernel sampled at offset `k` for detector pitch `tau`.
pub fn ramp_kernel(k: i64, tau: f64) -> f64 {
    if k == 0 {
        1.0 / (4.0 * tau * tau)
    } else if k % 2 == 0 {
        0.0
    } else {
        -1.0 / (PI * PI * (k * k) as f64 * tau * tau)
    }
}

struct RampFilter {
    n_det: usize,
    n_fft: usize,
    /// Real frequency response, already scaled by `tau / n_fft`.
    response: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl RampFilter {
    fn new(n_det: usize, tau: f64) -> Self {
        let n_fft = (2 * n_det).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n_fft);
        let inv = planner.plan_fft_inverse(n_fft);
        let mut kernel = vec![Complex::new(0.0, 0.0); n_fft];
        for (i, c) in kernel.iter_mut().enumerate() {
            let k = if i <= n_fft / 2 {
                i as i64
            } else {
                i as i64 - n_fft as i64
            };
            c.re = ramp_kernel(k, tau);
        }
        fwd.process(&mut kernel);
        let scale = tau / n_fft as f64;
        let response = kernel.iter().map(|c| c.re * scale).collect();
        RampFilter {
            n_det,
            n_fft,
            response,
            fwd,
            inv,
        }
    }

    fn filter_rows(&self, data: &mut [f64]) {
        data.par_chunks_mut(self.n_det).for_each(|row| {
            let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
            for (b, &v) in buf.iter_mut().zip(row.iter()) {
                b.re = v;
            }
            self.fwd.process(&mut buf);
            for (b, &h) in buf.iter_mut().zip(&self.response) {
                *b *= h;
            }
            self.inv.process(&mut buf);
            for (v, b) in row.iter_mut().zip(&buf) {
                *v = b.re;
            }
        });
    }
}

impl ScanGeometry {
    /// Detector pitch the ramp filter operates on: the physical pitch for
    /// parallel beam, the pitch rescaled to the rotation centre for fan beam.
    pub fn fbp_filter_pitch(&self) -> f64 {
        match self.beam() {
            Beam::Parallel => self.det_spacing(),
            Beam::Fan => {
                let d = self.src_dist().unwrap_or(0.0);
                self.det_spacing() * d / (d + self.det_dist().unwrap_or(0.0))
            }
        }
    }

    /// Per-cell pre-weight applied before filtering (all ones for parallel beam).
    pub fn fbp_preweights(&self) -> Vec<f64> {
        match self.beam() {
            Beam::Parallel => vec![1.0; self.n_det()],
            Beam::Fan => {
                let d = self.src_dist().unwrap_or(0.0);
                let mag = d / (d + self.det_dist().unwrap_or(0.0));
                (0..self.n_det())
                    .map(|k| {
                        let a = self.det_coord(k) * mag;
                        d / (d * d + a * a).sqrt()
                    })
                    .collect()
            }
        }
    }

    /// Fractional detector index and weight with which pixel `(x, y)` (mm)
    /// receives filtered view `angle`; the angular quadrature `pi / q1` is
    /// folded into the weight.
    #[inline]
    fn fbp_sample(&self, angle: f64, x: f64, y: f64, quad: f64) -> (f64, f64) {
        let (sin, cos) = angle.sin_cos();
        let centre = 0.5 * (self.n_det() as f64 - 1.0);
        match self.beam() {
            Beam::Parallel => {
                let s = x * cos + y * sin;
                (s / self.det_spacing() + centre, quad)
            }
            Beam::Fan => {
                let d = self.src_dist().unwrap_or(0.0);
                let l = d - (x * cos + y * sin);
                let a = d * (-x * sin + y * cos) / l;
                let u = d / l;
                (a / self.fbp_filter_pitch() + centre, quad * u * u)
            }
        }
    }

    fn pixel_centre(&self, i: usize, j: usize) -> (f64, f64) {
        let (m1, m2) = self.grid();
        let ps = self.pixel_size();
        (
            (j as f64 - 0.5 * (m2 as f64 - 1.0)) * ps,
            (0.5 * (m1 as f64 - 1.0) - i as f64) * ps,
        )
    }

    /// Pixel-driven weighted backprojection of already filtered views.
    pub fn fbp_backproject_views(&self, q: &[f64], views: &[usize], out: &mut [f64]) {
        let (_, m2) = self.grid();
        let n_det = self.n_det();
        assert_eq!(q.len(), views.len() * n_det);
        assert_eq!(out.len(), self.n_pixels());
        let quad = PI / views.len() as f64;
        let angles = self.view_angles();
        out.par_chunks_mut(m2).enumerate().for_each(|(i, row)| {
            for (j, px) in row.iter_mut().enumerate() {
                let (x, y) = self.pixel_centre(i, j);
                let mut acc = 0.0;
                for (r, &v) in views.iter().enumerate() {
                    let (idx, w) = self.fbp_sample(angles[v], x, y, quad);
                    let k0 = idx.floor();
                    if k0 < -1.0 || k0 > n_det as f64 - 1.0 {
                        continue;
                    }
                    let t = idx - k0;
                    let k0 = k0 as isize;
                    let qrow = &q[r * n_det..][..n_det];
                    let mut val = 0.0;
                    if k0 >= 0 {
                        val += (1.0 - t) * qrow[k0 as usize];
                    }
                    if k0 + 1 < n_det as isize {
                        val += t * qrow[(k0 + 1) as usize];
                    }
                    acc += w * val;
                }
                *px = acc;
            }
        });
    }

    /// Transpose of [`ScanGeometry::fbp_backproject_views`].
    pub fn fbp_backproject_transpose_views(&self, img: &[f64], views: &[usize], out: &mut [f64]) {
        let (m1, m2) = self.grid();
        let n_det = self.n_det();
        assert_eq!(img.len(), self.n_pixels());
        assert_eq!(out.len(), views.len() * n_det);
        let quad = PI / views.len() as f64;
        let angles = self.view_angles();
        out.par_chunks_mut(n_det)
            .zip(views.par_iter())
            .for_each(|(qrow, &v)| {
                qrow.fill(0.0);
                for i in 0..m1 {
                    for j in 0..m2 {
                        let val = img[i * m2 + j];
                        if val == 0.0 {
                            continue;
                        }
                        let (x, y) = self.pixel_centre(i, j);
                        let (idx, w) = self.fbp_sample(angles[v], x, y, quad);
                        let k0 = idx.floor();
                        if k0 < -1.0 || k0 > n_det as f64 - 1.0 {
                            continue;
                        }
                        let t = idx - k0;
                        let k0 = k0 as isize;
                        if k0 >= 0 {
                            qrow[k0 as usize] += w * (1.0 - t) * val;
                        }
                        if k0 + 1 < n_det as isize {
                            qrow[(k0 + 1) as usize] += w * t * val;
                        }
                    }
                }
            });
    }

    fn ramp_filter(&self) -> RampFilter {
        RampFilter::new(self.n_det(), self.fbp_filter_pitch())
    }

    /// Slice-level FBP of `views.len() x n_det` data into a row-major image.
    pub fn fbp_views(&self, y: &[f64], views: &[usize], out: &mut [f64]) {
        let n_det = self.n_det();
        let weights = self.fbp_preweights();
        let mut q = y.to_vec();
        for row in q.chunks_mut(n_det) {
            for (v, w) in row.iter_mut().zip(&weights) {
                *v *= w;
            }
        }
        self.ramp_filter().filter_rows(&mut q);
        self.fbp_backproject_views(&q, views, out);
    }

    /// Slice-level transpose of [`ScanGeometry::fbp_views`].
    pub fn fbp_transpose_views(&self, img: &[f64], views: &[usize], out: &mut [f64]) {
        let n_det = self.n_det();
        self.fbp_backproject_transpose_views(img, views, out);
        self.ramp_filter().filter_rows(out);
        let weights = self.fbp_preweights();
        for row in out.chunks_mut(n_det) {
            for (v, w) in row.iter_mut().zip(&weights) {
                *v *= w;
            }
        }
    }

    /// Ram-Lak filtered backprojection over the sinogram's own view subset.
    pub fn fbp(&self, y: &Sinogram) -> Result<Array2<f64>> {
        self.check_sinogram(y)?;
        let data = y.data.as_standard_layout();
        let mut out = Array2::zeros(self.grid());
        self.fbp_views(
            data.as_slice().expect("standard layout"),
            y.views.indices(),
            out.as_slice_mut().expect("fresh array"),
        );
        Ok(out)
    }

    /// Transpose of [`ScanGeometry::fbp`] for the given subset.
    pub fn fbp_transpose(&self, x: ArrayView2<f64>, views: &ViewSubset) -> Result<Sinogram> {
        self.check_image(&x)?;
        self.check_subset(views)?;
        let x = x.as_standard_layout();
        let mut out = Sinogram::zeros(views.clone(), self.n_det());
        self.fbp_transpose_views(
            x.as_slice().expect("standard layout"),
            views.indices(),
            out.data.as_slice_mut().expect("fresh array"),
        );
        Ok(out)
    }
}
