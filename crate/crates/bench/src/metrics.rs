//! Image fidelity metrics computed directly on arrays.

use ndarray::{Array2, ArrayView2};

use crate::error::{BenchError, Result};

fn check(x: ArrayView2<f64>, r: ArrayView2<f64>) -> Result<()> {
    if x.dim() != r.dim() {
        return Err(BenchError::Shape(x.dim(), r.dim()));
    }
    if x.is_empty() {
        return Err(BenchError::Grid(x.nrows(), x.ncols()));
    }
    Ok(())
}

pub fn mse(x: ArrayView2<f64>, r: ArrayView2<f64>) -> Result<f64> {
    check(x, r)?;
    let s: f64 = x.iter().zip(r.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / x.len() as f64)
}

/// `10 log10(range^2 / MSE)`; identical inputs give `f64::INFINITY`.
pub fn psnr(x: ArrayView2<f64>, r: ArrayView2<f64>, range: f64) -> Result<f64> {
    if !(range > 0.0) {
        return Err(BenchError::Range(range));
    }
    let m = mse(x, r)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (range * range / m).log10())
}

/// Affine map from normalised attenuation to Hounsfield units:
/// `HU = slope * (v - mu_water)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HuScale {
    pub mu_water: f64,
    pub slope: f64,
}

impl Default for HuScale {
    /// Images normalised from a `[-1024, 3071]` HU window.
    fn default() -> Self {
        HuScale {
            mu_water: 1024.0 / 4095.0,
            slope: 4095.0,
        }
    }
}

impl HuScale {
    pub fn to_hu(&self, v: f64) -> f64 {
        self.slope * (v - self.mu_water)
    }
}

pub fn rmse_hu(x: ArrayView2<f64>, r: ArrayView2<f64>, hu: &HuScale) -> Result<f64> {
    check(x, r)?;
    let s: f64 = x
        .iter()
        .zip(r.iter())
        .map(|(&a, &b)| (hu.to_hu(a) - hu.to_hu(b)).powi(2))
        .sum();
    Ok((s / x.len() as f64).sqrt())
}

/// Gaussian-window SSIM with the same constants and valid-window policy as
/// the training loss, evaluated pixel by pixel with a full 2D window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

fn window_2d(size: usize, sigma: f64) -> Array2<f64> {
    let c = (size / 2) as f64;
    let w = Array2::from_shape_fn((size, size), |(i, j)| {
        let (di, dj) = (i as f64 - c, j as f64 - c);
        (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()
    });
    let s = w.sum();
    w / s
}

pub fn ssim(x: ArrayView2<f64>, r: ArrayView2<f64>, p: &SsimParams) -> Result<f64> {
    check(x, r)?;
    if !(p.range > 0.0) {
        return Err(BenchError::Range(p.range));
    }
    let (h, w) = x.dim();
    let mut size = p.window.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let size = size.max(1);
    let win = window_2d(size, p.sigma);
    let c1 = (p.k1 * p.range).powi(2);
    let c2 = (p.k2 * p.range).powi(2);
    let (oh, ow) = (h - size + 1, w - size + 1);
    let mut total = 0.0;
    for i in 0..oh {
        for j in 0..ow {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ((a, b), wv) in x
                .slice(ndarray::s![i..i + size, j..j + size])
                .iter()
                .zip(r.slice(ndarray::s![i..i + size, j..j + size]).iter())
                .zip(win.iter())
            {
                mx += wv * a;
                my += wv * b;
                sxx += wv * a * a;
                syy += wv * b * b;
                sxy += wv * a * b;
            }
            let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (oh * ow) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRecord {
    pub psnr: f64,
    pub ssim: f64,
    pub rmse_hu: f64,
}

impl MetricsRecord {
    pub const HEADER: &'static str = "psnr_db\tssim\trmse_hu";

    /// Images are compared on a unit dynamic range.
    pub fn compute(x: ArrayView2<f64>, r: ArrayView2<f64>, hu: &HuScale) -> Result<Self> {
        Ok(MetricsRecord {
            psnr: psnr(x, r, 1.0)?,
            ssim: ssim(x, r, &SsimParams::default())?,
            rmse_hu: rmse_hu(x, r, hu)?,
        })
    }

    pub fn mean(records: &[MetricsRecord]) -> Option<MetricsRecord> {
        if records.is_empty() {
            return None;
        }
        let n = records.len() as f64;
        Some(MetricsRecord {
            psnr: records.iter().map(|m| m.psnr).sum::<f64>() / n,
            ssim: records.iter().map(|m| m.ssim).sum::<f64>() / n,
            rmse_hu: records.iter().map(|m| m.rmse_hu).sum::<f64>() / n,
        })
    }

    pub fn line(&self) -> String {
        format!("{:.4}\t{:.6}\t{:.4}", self.psnr, self.ssim, self.rmse_hu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn psnr_sentinel_and_zero_db() {
        let a = array![[0.1, 0.2], [0.3, 0.4]];
        assert_eq!(psnr(a.view(), a.view(), 1.0).unwrap(), f64::INFINITY);
        // a uniform error equal to the range gives MSE = range^2
        let b = &a + 2.0;
        assert!(psnr(a.view(), b.view(), 2.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn psnr_by_hand() {
        let a = array![[0.0, 0.0], [0.0, 0.0]];
        let b = array![[0.1, -0.1], [0.2, 0.0]];
        // MSE = (0.01 + 0.01 + 0.04) / 4 = 0.015
        let want = 10.0 * (1.0f64 / 0.015).log10();
        assert!((psnr(a.view(), b.view(), 1.0).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn rmse_hu_cases() {
        let hu = HuScale::default();
        let a = array![[0.25, 0.5], [0.75, 1.0]];
        assert_eq!(rmse_hu(a.view(), a.view(), &hu).unwrap(), 0.0);
        let b = &a + 1.0 / 4095.0;
        assert!((rmse_hu(a.view(), b.view(), &hu).unwrap() - 1.0).abs() < 1e-9);
        let c = array![[0.25, 0.5], [0.75, 0.0]];
        // only one pixel differs, by 4095 HU
        let want = (4095.0f64 * 4095.0 / 4.0).sqrt();
        assert!((rmse_hu(a.view(), c.view(), &hu).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_and_bounds() {
        let a = Array2::from_shape_fn((16, 16), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 10.0);
        assert!((ssim(a.view(), a.view(), &SsimParams::default()).unwrap() - 1.0).abs() < 1e-15);
        let b = a.mapv(|v| 1.0 - v);
        let s = ssim(a.view(), b.view(), &SsimParams::default()).unwrap();
        assert!((-1.0..1.0).contains(&s));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Array2::<f64>::zeros((2, 3));
        let b = Array2::<f64>::zeros((3, 2));
        assert!(psnr(a.view(), b.view(), 1.0).is_err());
        assert!(psnr(a.view(), a.view(), 0.0).is_err());
    }
}
