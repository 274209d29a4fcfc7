//! Training objectives built from tape primitives.

use std::sync::Arc;

use mvms_diffcore::{LinearOp, Tape, Var};

use crate::error::{CoreError, Result};
use crate::refine::StageContext;

/// Gaussian-window SSIM constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L`.
    pub range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

impl SsimConfig {
    /// Window actually used on an `h x w` image: the configured size, shrunk
    /// to the largest odd size that fits.
    pub fn effective_window(&self, h: usize, w: usize) -> usize {
        let fit = h.min(w);
        let fit = if fit.is_multiple_of(2) {
            fit.saturating_sub(1)
        } else {
            fit
        };
        self.window.min(fit).max(1)
    }

    /// Normalised 1D Gaussian taps of the given odd length.
    pub fn taps(&self, size: usize) -> Vec<f64> {
        let c = (size as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..size)
            .map(|k| (-(k as f64 - c).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

/// Weights of the two loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub gamma: f64,
    pub ssim: SsimConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 1.0,
            ssim: SsimConfig::default(),
        }
    }
}

/// Separable Gaussian filter without padding: `[1, H, W]` to
/// `[1, H - k + 1, W - k + 1]`.
struct GaussianValid {
    taps: Vec<f64>,
    h: usize,
    w: usize,
}

impl GaussianValid {
    fn out_hw(&self) -> (usize, usize) {
        let k = self.taps.len();
        (self.h + 1 - k, self.w + 1 - k)
    }
}

impl LinearOp for GaussianValid {
    fn input_shape(&self) -> [usize; 3] {
        [1, self.h, self.w]
    }
    fn output_shape(&self) -> [usize; 3] {
        let (oh, ow) = self.out_hw();
        [1, oh, ow]
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let (oh, ow) = self.out_hw();
        let k = &self.taps;
        // rows first, then columns
        let mut tmp = vec![0.0; self.h * ow];
        for i in 0..self.h {
            let row = &x[i * self.w..][..self.w];
            for j in 0..ow {
                tmp[i * ow + j] = k.iter().zip(&row[j..]).map(|(a, b)| a * b).sum();
            }
        }
        for i in 0..oh {
            for j in 0..ow {
                out[i * ow + j] = k
                    .iter()
                    .enumerate()
                    .map(|(d, a)| a * tmp[(i + d) * ow + j])
                    .sum();
            }
        }
    }
    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        let (oh, ow) = self.out_hw();
        let k = &self.taps;
        let mut tmp = vec![0.0; self.h * ow];
        for i in 0..oh {
            for j in 0..ow {
                let v = y[i * ow + j];
                for (d, a) in k.iter().enumerate() {
                    tmp[(i + d) * ow + j] += a * v;
                }
            }
        }
        out.fill(0.0);
        for i in 0..self.h {
            for j in 0..ow {
                let v = tmp[i * ow + j];
                for (d, a) in k.iter().enumerate() {
                    out[i * self.w + j + d] += a * v;
                }
            }
        }
    }
    fn name(&self) -> &str {
        "gaussian_valid"
    }
}

fn check_pair(t: &Tape, x: Var, y: Var) -> Result<(usize, usize)> {
    let (a, b) = (t.value(x).shape(), t.value(y).shape());
    match (t.value(x).chw(), a == b) {
        (Some((1, h, w)), true) => Ok((h, w)),
        _ => Err(CoreError::Ssim(format!(
            "expected two [1, H, W] images of equal shape, got {a:?} and {b:?}"
        ))),
    }
}

/// Mean absolute error; the subgradient at ties is 0.
pub fn l1_loss(t: &mut Tape, x: Var, target: Var) -> Result<Var> {
    let d = t.sub(x, target)?;
    let a = t.abs(d);
    Ok(t.mean(a))
}

/// Mean local SSIM over all valid window positions.
pub fn ssim(t: &mut Tape, x: Var, y: Var, cfg: &SsimConfig) -> Result<Var> {
    let (h, w) = check_pair(t, x, y)?;
    if !(cfg.range > 0.0) {
        return Err(CoreError::Ssim(format!(
            "dynamic range {} must be positive",
            cfg.range
        )));
    }
    let size = cfg.effective_window(h, w);
    let filt: Arc<dyn LinearOp> = Arc::new(GaussianValid {
        taps: cfg.taps(size),
        h,
        w,
    });
    let c1 = (cfg.k1 * cfg.range).powi(2);
    let c2 = (cfg.k2 * cfg.range).powi(2);

    let mx = t.linear(x, filt.clone())?;
    let my = t.linear(y, filt.clone())?;
    let xx = t.mul(x, x)?;
    let yy = t.mul(y, y)?;
    let xy = t.mul(x, y)?;
    let exx = t.linear(xx, filt.clone())?;
    let eyy = t.linear(yy, filt.clone())?;
    let exy = t.linear(xy, filt)?;

    let mxx = t.mul(mx, mx)?;
    let myy = t.mul(my, my)?;
    let mxy = t.mul(mx, my)?;
    let sxx = t.sub(exx, mxx)?;
    let syy = t.sub(eyy, myy)?;
    let sxy = t.sub(exy, mxy)?;

    // x == y makes each numerator factor bitwise equal to its denominator
    // factor: 2a is exactly a + a.
    let lum_num = t.scale(mxy, 2.0);
    let lum_num = t.offset(lum_num, c1);
    let lum_den = t.add(mxx, myy)?;
    let lum_den = t.offset(lum_den, c1);
    let cs_num = t.scale(sxy, 2.0);
    let cs_num = t.offset(cs_num, c2);
    let cs_den = t.add(sxx, syy)?;
    let cs_den = t.offset(cs_den, c2);

    let num = t.mul(lum_num, cs_num)?;
    let den = t.mul(lum_den, cs_den)?;
    let map = t.div(num, den)?;
    Ok(t.mean(map))
}

/// Loss terms of one evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub l1: Var,
    /// `1 - SSIM`.
    pub ssim_term: Var,
}

/// `l1 + gamma * (1 - ssim)`.
pub fn total_loss(t: &mut Tape, x: Var, target: Var, cfg: &LossConfig) -> Result<LossTerms> {
    let l1 = l1_loss(t, x, target)?;
    let s = ssim(t, x, target, &cfg.ssim)?;
    let neg = t.scale(s, -1.0);
    let ssim_term = t.offset(neg, 1.0);
    let weighted = t.scale(ssim_term, cfg.gamma);
    let total = t.add(l1, weighted)?;
    Ok(LossTerms {
        total,
        l1,
        ssim_term,
    })
}

/// Measurement-consistency loss needing no ground truth: [`total_loss`]
/// between `F_s P_s x` and `F_s y_s`.
pub fn unsupervised_loss(
    t: &mut Tape,
    x: Var,
    ctx: &StageContext,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    let ops = ctx.ops();
    let px = t.linear(x, ops.project_full.clone())?;
    let psx = t.linear(px, ops.select.clone())?;
    let back = t.linear(psx, ops.fbp_sparse.clone())?;
    let x0 = t.constant(ctx.x0().clone());
    total_loss(t, back, x0, cfg)
}
