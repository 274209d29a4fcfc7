//! Explicit-matrix versions of every operator the refinement stack uses,
//! built independently of the operator composition under test.

#![allow(dead_code)]

use std::sync::Arc;

use mvms_core::refine::assemble_image;
use mvms_core::{ChannelSet, StageContext, ViewOps};
use mvms_tomo::{Beam, GeometryConfig, ScanGeometry, Sinogram, ViewSubset};
use ndarray::{Array1, Array2};

/// Block-diagonal `R . W`: the cosine pre-weight followed by the linear
/// (not circular) ramp convolution, one block per view.
fn ramp_weight_matrix(geom: &ScanGeometry, n_views: usize) -> Array2<f64> {
    let n = geom.n_det();
    let tau = geom.fbp_filter_pitch();
    let w = geom.fbp_preweights();
    let mut m = Array2::zeros((n_views * n, n_views * n));
    for v in 0..n_views {
        for i in 0..n {
            for j in 0..n {
                let k = i as i64 - j as i64;
                m[[v * n + i, v * n + j]] = tau * mvms_tomo::ramp_kernel(k, tau) * w[j];
            }
        }
    }
    m
}

/// Weighted backprojection probed one detector cell at a time.
fn backprojection_matrix(geom: &ScanGeometry, views: &[usize]) -> Array2<f64> {
    let rows = views.len() * geom.n_det();
    let n_pix = geom.n_pixels();
    let mut m = Array2::zeros((n_pix, rows));
    let mut unit = vec![0.0; rows];
    let mut col = vec![0.0; n_pix];
    for r in 0..rows {
        unit[r] = 1.0;
        geom.fbp_backproject_views(&unit, views, &mut col);
        unit[r] = 0.0;
        for (p, &v) in col.iter().enumerate() {
            m[[p, r]] = v;
        }
    }
    m
}

pub fn fbp_matrix(geom: &ScanGeometry, views: &[usize]) -> Array2<f64> {
    backprojection_matrix(geom, views).dot(&ramp_weight_matrix(geom, views.len()))
}

/// Rows of the full sinogram kept by the subset.
pub fn selection_matrix(subset: &ViewSubset, n_det: usize) -> Array2<f64> {
    let idx = subset.indices();
    let mut m = Array2::zeros((idx.len() * n_det, subset.n_full() * n_det));
    for (r, &v) in idx.iter().enumerate() {
        for k in 0..n_det {
            m[[r * n_det + k, v * n_det + k]] = 1.0;
        }
    }
    m
}

/// Linear interpolation along the periodic view axis. For parallel beam a
/// neighbour reached across the period is read with the detector reversed.
pub fn interpolation_matrix(geom: &ScanGeometry, subset: &ViewSubset) -> Array2<f64> {
    let n = geom.n_det();
    let nf = subset.n_full() as i64;
    let idx: Vec<i64> = subset.indices().iter().map(|&i| i as i64).collect();
    let reverse = geom.beam() == Beam::Parallel;
    let mut m = Array2::zeros((subset.n_full() * n, idx.len() * n));
    for v in 0..nf {
        // (row in subset, position on the unrolled axis, crossed the period)
        let mut taps: Vec<(usize, f64, bool)> = Vec::new();
        if let Some(r) = idx.iter().position(|&i| i == v) {
            taps.push((r, 1.0, false));
        } else {
            let below = idx.iter().rposition(|&i| i < v);
            let above = idx.iter().position(|&i| i > v);
            let (lr, lp, lw) = match below {
                Some(r) => (r, idx[r], false),
                None => (idx.len() - 1, idx[idx.len() - 1] - nf, true),
            };
            let (hr, hp, hw) = match above {
                Some(r) => (r, idx[r], false),
                None => (0, idx[0] + nf, true),
            };
            let t = (v - lp) as f64 / (hp - lp) as f64;
            taps.push((lr, 1.0 - t, lw));
            taps.push((hr, t, hw));
        }
        for (r, w, crossed) in taps {
            for k in 0..n {
                let src = if crossed && reverse { n - 1 - k } else { k };
                m[[v as usize * n + k, r * n + src]] += w;
            }
        }
    }
    m
}

/// Every matrix of one geometry and subset.
pub struct Dense {
    pub p_full: Array2<f64>,
    pub p_sparse: Array2<f64>,
    pub select: Array2<f64>,
    pub f_sparse: Array2<f64>,
    pub f_full: Array2<f64>,
    pub interp: Array2<f64>,
}

impl Dense {
    pub fn new(geom: &ScanGeometry, subset: &ViewSubset) -> Self {
        let full = geom.full_subset();
        Dense {
            p_full: geom.dense_matrix(&full).unwrap(),
            p_sparse: geom.dense_matrix(subset).unwrap(),
            select: selection_matrix(subset, geom.n_det()),
            f_sparse: fbp_matrix(geom, subset.indices()),
            f_full: fbp_matrix(geom, full.indices()),
            interp: interpolation_matrix(geom, subset),
        }
    }

    /// The eight stack channels of image `x` under measurement `y`, in
    /// stack order.
    pub fn channels(&self, x: &Array1<f64>, y: &Array1<f64>) -> Vec<Array1<f64>> {
        let fs = |v: &Array1<f64>| self.f_sparse.dot(v);
        let ff = |v: &Array1<f64>| self.f_full.dot(v);
        let ps = |v: &Array1<f64>| self.select.dot(&self.p_full.dot(v));
        let pf = |v: &Array1<f64>| self.p_full.dot(v);

        let x0 = fs(y);
        let e_s = &x0 - &fs(&ps(x));
        let e_d = x - &fs(&ps(x));
        let r_hat = x + &e_s - &e_d;
        let e_j = &r_hat - &fs(&ps(&r_hat));
        let e_f = x - &ff(&pf(x));
        let e_k = &r_hat - &ff(&pf(&r_hat));
        let e_u = ff(&(self.interp.dot(&ps(x)) - pf(x)));
        let x_u = ff(&self.interp.dot(y));
        vec![x.clone(), x_u, e_u, e_f, e_k, e_s, e_d, e_j]
    }
}

/// Small geometries with regular and irregular subsets; the irregular ones
/// leave gaps at both ends so interpolation wraps in both directions.
pub fn cases() -> Vec<(&'static str, ScanGeometry, ViewSubset)> {
    let fan = GeometryConfig::toy_fan_60()
        .with_grid(8, 8)
        .build()
        .unwrap();
    let par = GeometryConfig {
        beam: Beam::Parallel,
        n_views: 24,
        n_det: 12,
        det_spacing: 1.0,
        src_dist: 0.0,
        det_dist: 0.0,
        grid: (8, 8),
        pixel_size: 1.0,
    }
    .build()
    .unwrap();
    vec![
        ("fan/decimated", fan.clone(), fan.sparse_subset(15).unwrap()),
        (
            "fan/irregular",
            fan,
            ViewSubset::new(vec![2, 9, 17, 30, 41, 50], 60).unwrap(),
        ),
        (
            "parallel/irregular",
            par,
            ViewSubset::new(vec![1, 5, 9, 14, 20], 24).unwrap(),
        ),
    ]
}

fn flat(x: &Array2<f64>) -> Array1<f64> {
    Array1::from_iter(x.iter().copied())
}

/// Largest deviation of the projector, its adjoint and the assembled stack
/// from the explicit matrices, for image `x` and measurement `y`.
pub fn max_deviation(
    geom: &ScanGeometry,
    subset: &ViewSubset,
    x: &Array2<f64>,
    y: &Sinogram,
) -> f64 {
    let d = Dense::new(geom, subset);
    let full = geom.full_subset();
    let xf = flat(x);
    let mut worst: f64 = 0.0;
    let mut track = |a: &[f64], b: &Array1<f64>| {
        assert_eq!(a.len(), b.len());
        for (u, v) in a.iter().zip(b) {
            worst = worst.max((u - v).abs());
        }
    };

    let px = geom.forward_project(x.view(), &full).unwrap();
    track(px.data.as_slice().unwrap(), &d.p_full.dot(&xf));
    let bt = geom.back_project(&px).unwrap();
    track(bt.as_slice().unwrap(), &d.p_full.t().dot(&flat(&px.data)));

    let ops = Arc::new(ViewOps::new(Arc::new(geom.clone()), subset.clone()).unwrap());
    let ctx = StageContext::new(ops, y).unwrap();
    let stack = assemble_image(x.view(), &ctx, ChannelSet::ALL).unwrap();
    let want = d.channels(&xf, &flat(&y.data));
    let plane = geom.n_pixels();
    for (c, w) in want.iter().enumerate() {
        track(&stack.data()[c * plane..(c + 1) * plane], w);
    }
    worst
}
