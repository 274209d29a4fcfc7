//! Convolution kernels on raw `[C, H, W]` slices.
//!
//! Every kernel parallelises over a channel axis whose outputs are disjoint,
//! and each output is accumulated in a fixed order, so results do not depend
//! on the number of rayon threads.

use rayon::prelude::*;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Valid index ranges for a shift of `d` in `-1..=1` over length `n`.
#[inline]
fn shifted(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)) as usize;
    (lo, hi)
}

/// 3x3 convolution (cross-correlation), stride 1, zero padding 1.
/// `wt` is `[co, ci, 3, 3]`.
pub(crate) fn conv3x3(x: &[f64], d: Dims, wt: &[f64], bias: &[f64], co: usize) -> Vec<f64> {
    let plane = d.plane();
    let mut out = vec![0.0; co * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(o, dst)| {
        dst.fill(bias[o]);
        for i in 0..d.c {
            let src = &x[i * plane..][..plane];
            let k = &wt[(o * d.c + i) * 9..][..9];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = shifted(d.h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = shifted(d.w, dx);
                    let wv = k[ky * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let drow = &mut dst[y * d.w + x0..y * d.w + x1];
                        let srow = &src[sy * d.w + (x0 as isize + dx) as usize..][..x1 - x0];
                        for (a, b) in drow.iter_mut().zip(srow) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn conv3x3_grad_input(g: &[f64], d: Dims, wt: &[f64], co: usize) -> Vec<f64> {
    let plane = d.plane();
    let mut gx = vec![0.0; d.c * plane];
    gx.par_chunks_mut(plane).enumerate().for_each(|(i, dst)| {
        for o in 0..co {
            let src = &g[o * plane..][..plane];
            let k = &wt[(o * d.c + i) * 9..][..9];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = shifted(d.h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = shifted(d.w, dx);
                    let wv = k[ky * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let grow = &src[y * d.w + x0..y * d.w + x1];
                        let start = sy * d.w + (x0 as isize + dx) as usize;
                        let drow = &mut dst[start..start + (x1 - x0)];
                        for (a, b) in drow.iter_mut().zip(grow) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    });
    gx
}

pub(crate) fn conv3x3_grad_weight(g: &[f64], x: &[f64], d: Dims, co: usize) -> Vec<f64> {
    let plane = d.plane();
    let mut gw = vec![0.0; co * d.c * 9];
    gw.par_chunks_mut(d.c * 9).enumerate().for_each(|(o, dst)| {
        let grad = &g[o * plane..][..plane];
        for i in 0..d.c {
            let src = &x[i * plane..][..plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = shifted(d.h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = shifted(d.w, dx);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let grow = &grad[y * d.w + x0..y * d.w + x1];
                        let srow = &src[sy * d.w + (x0 as isize + dx) as usize..][..x1 - x0];
                        acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    dst[i * 9 + ky * 3 + kx] = acc;
                }
            }
        }
    });
    gw
}

pub(crate) fn channel_sums(g: &[f64], c: usize) -> Vec<f64> {
    let plane = g.len() / c.max(1);
    g.chunks(plane).map(|p| p.iter().sum()).collect()
}

/// 2x2 stride-2 convolution; `wt` is `[co, ci, 2, 2]`, input size even.
pub(crate) fn down2(x: &[f64], d: Dims, wt: &[f64], bias: &[f64], co: usize) -> Vec<f64> {
    let (h2, w2) = (d.h / 2, d.w / 2);
    let plane = d.plane();
    let mut out = vec![0.0; co * h2 * w2];
    out.par_chunks_mut(h2 * w2)
        .enumerate()
        .for_each(|(o, dst)| {
            dst.fill(bias[o]);
            for i in 0..d.c {
                let src = &x[i * plane..][..plane];
                let k = &wt[(o * d.c + i) * 4..][..4];
                for y in 0..h2 {
                    let r0 = &src[2 * y * d.w..][..d.w];
                    let r1 = &src[(2 * y + 1) * d.w..][..d.w];
                    for (xx, v) in dst[y * w2..(y + 1) * w2].iter_mut().enumerate() {
                        *v += k[0] * r0[2 * xx]
                            + k[1] * r0[2 * xx + 1]
                            + k[2] * r1[2 * xx]
                            + k[3] * r1[2 * xx + 1];
                    }
                }
            }
        });
    out
}

pub(crate) fn down2_grad_input(g: &[f64], d: Dims, wt: &[f64], co: usize) -> Vec<f64> {
    let (h2, w2) = (d.h / 2, d.w / 2);
    let plane = d.plane();
    let mut gx = vec![0.0; d.c * plane];
    gx.par_chunks_mut(plane).enumerate().for_each(|(i, dst)| {
        for o in 0..co {
            let src = &g[o * h2 * w2..][..h2 * w2];
            let k = &wt[(o * d.c + i) * 4..][..4];
            for y in 0..h2 {
                for xx in 0..w2 {
                    let gv = src[y * w2 + xx];
                    dst[2 * y * d.w + 2 * xx] += k[0] * gv;
                    dst[2 * y * d.w + 2 * xx + 1] += k[1] * gv;
                    dst[(2 * y + 1) * d.w + 2 * xx] += k[2] * gv;
                    dst[(2 * y + 1) * d.w + 2 * xx + 1] += k[3] * gv;
                }
            }
        }
    });
    gx
}

pub(crate) fn down2_grad_weight(g: &[f64], x: &[f64], d: Dims, co: usize) -> Vec<f64> {
    let (h2, w2) = (d.h / 2, d.w / 2);
    let plane = d.plane();
    let mut gw = vec![0.0; co * d.c * 4];
    gw.par_chunks_mut(d.c * 4).enumerate().for_each(|(o, dst)| {
        let grad = &g[o * h2 * w2..][..h2 * w2];
        for i in 0..d.c {
            let src = &x[i * plane..][..plane];
            let mut acc = [0.0; 4];
            for y in 0..h2 {
                for xx in 0..w2 {
                    let gv = grad[y * w2 + xx];
                    acc[0] += gv * src[2 * y * d.w + 2 * xx];
                    acc[1] += gv * src[2 * y * d.w + 2 * xx + 1];
                    acc[2] += gv * src[(2 * y + 1) * d.w + 2 * xx];
                    acc[3] += gv * src[(2 * y + 1) * d.w + 2 * xx + 1];
                }
            }
            dst[i * 4..i * 4 + 4].copy_from_slice(&acc);
        }
    });
    gw
}

/// 2x2 stride-2 transposed convolution; `wt` is `[ci, co, 2, 2]`, so the
/// same array passed to [`down2`] gives the exact adjoint map.
pub(crate) fn up2(x: &[f64], d: Dims, wt: &[f64], bias: &[f64], co: usize) -> Vec<f64> {
    let (h2, w2) = (d.h * 2, d.w * 2);
    let plane = d.plane();
    let mut out = vec![0.0; co * h2 * w2];
    out.par_chunks_mut(h2 * w2)
        .enumerate()
        .for_each(|(o, dst)| {
            dst.fill(bias[o]);
            for i in 0..d.c {
                let src = &x[i * plane..][..plane];
                let k = &wt[(i * co + o) * 4..][..4];
                for y in 0..d.h {
                    for xx in 0..d.w {
                        let v = src[y * d.w + xx];
                        dst[2 * y * w2 + 2 * xx] += k[0] * v;
                        dst[2 * y * w2 + 2 * xx + 1] += k[1] * v;
                        dst[(2 * y + 1) * w2 + 2 * xx] += k[2] * v;
                        dst[(2 * y + 1) * w2 + 2 * xx + 1] += k[3] * v;
                    }
                }
            }
        });
    out
}

pub(crate) fn up2_grad_input(g: &[f64], d: Dims, wt: &[f64], co: usize) -> Vec<f64> {
    let (h2, w2) = (d.h * 2, d.w * 2);
    let plane = d.plane();
    let mut gx = vec![0.0; d.c * plane];
    gx.par_chunks_mut(plane).enumerate().for_each(|(i, dst)| {
        for o in 0..co {
            let src = &g[o * h2 * w2..][..h2 * w2];
            let k = &wt[(i * co + o) * 4..][..4];
            for y in 0..d.h {
                for xx in 0..d.w {
                    dst[y * d.w + xx] += k[0] * src[2 * y * w2 + 2 * xx]
                        + k[1] * src[2 * y * w2 + 2 * xx + 1]
                        + k[2] * src[(2 * y + 1) * w2 + 2 * xx]
                        + k[3] * src[(2 * y + 1) * w2 + 2 * xx + 1];
                }
            }
        }
    });
    gx
}

pub(crate) fn up2_grad_weight(g: &[f64], x: &[f64], d: Dims, co: usize) -> Vec<f64> {
    let (h2, w2) = (d.h * 2, d.w * 2);
    let plane = d.plane();
    let mut gw = vec![0.0; d.c * co * 4];
    gw.par_chunks_mut(co * 4).enumerate().for_each(|(i, dst)| {
        let src = &x[i * plane..][..plane];
        for o in 0..co {
            let grad = &g[o * h2 * w2..][..h2 * w2];
            let mut acc = [0.0; 4];
            for y in 0..d.h {
                for xx in 0..d.w {
                    let v = src[y * d.w + xx];
                    acc[0] += v * grad[2 * y * w2 + 2 * xx];
                    acc[1] += v * grad[2 * y * w2 + 2 * xx + 1];
                    acc[2] += v * grad[(2 * y + 1) * w2 + 2 * xx];
                    acc[3] += v * grad[(2 * y + 1) * w2 + 2 * xx + 1];
                }
            }
            dst[o * 4..o * 4 + 4].copy_from_slice(&acc);
        }
    });
    gw
}
