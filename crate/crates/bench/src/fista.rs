//! Monotone FISTA for `1/2 ||P_s x - y||^2 + lambda TV(x)` subject to
//! `x >= 0`. The TV proximal map is solved approximately by a fixed number
//! of fast dual projection steps.

use mvms_tomo::{ScanGeometry, Sinogram};
use ndarray::Array2;

use crate::error::{BenchError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FistaConfig {
    pub lambda: f64,
    pub max_iter: usize,
    pub inner_iter: usize,
    /// Power iterations used to bound `||P_s||^2`.
    pub power_iter: usize,
}

impl FistaConfig {
    pub fn new(lambda: f64) -> Self {
        FistaConfig {
            lambda,
            max_iter: 100,
            inner_iter: 20,
            power_iter: 30,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FistaResult {
    pub image: Array2<f64>,
    /// Objective after each outer iteration; non-increasing.
    pub objective: Vec<f64>,
}

/// Isotropic total variation with forward differences; the difference
/// across the last row or column is zero.
pub fn tv(x: &Array2<f64>) -> f64 {
    let (m1, m2) = x.dim();
    let mut s = 0.0;
    for i in 0..m1 {
        for j in 0..m2 {
            let dy = if i + 1 < m1 {
                x[[i, j]] - x[[i + 1, j]]
            } else {
                0.0
            };
            let dx = if j + 1 < m2 {
                x[[i, j]] - x[[i, j + 1]]
            } else {
                0.0
            };
            s += (dy * dy + dx * dx).sqrt();
        }
    }
    s
}

/// `-div(p, q)`: the adjoint of the forward difference map.
fn neg_div(p: &Array2<f64>, q: &Array2<f64>) -> Array2<f64> {
    let (m1, m2) = p.dim();
    Array2::from_shape_fn((m1, m2), |(i, j)| {
        let mut v = 0.0;
        if i + 1 < m1 {
            v += p[[i, j]];
        }
        if i > 0 {
            v -= p[[i - 1, j]];
        }
        if j + 1 < m2 {
            v += q[[i, j]];
        }
        if j > 0 {
            v -= q[[i, j - 1]];
        }
        v
    })
}

/// Forward differences `(x_ij - x_{i+1,j}, x_ij - x_{i,j+1})`.
fn grad(x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (m1, m2) = x.dim();
    let p = Array2::from_shape_fn((m1, m2), |(i, j)| {
        if i + 1 < m1 {
            x[[i, j]] - x[[i + 1, j]]
        } else {
            0.0
        }
    });
    let q = Array2::from_shape_fn((m1, m2), |(i, j)| {
        if j + 1 < m2 {
            x[[i, j]] - x[[i, j + 1]]
        } else {
            0.0
        }
    });
    (p, q)
}

/// Approximate `argmin_{x >= 0} 1/2 ||x - b||^2 + mu TV(x)`.
pub fn tv_prox(b: &Array2<f64>, mu: f64, iters: usize) -> Array2<f64> {
    let primal = |p: &Array2<f64>, q: &Array2<f64>| {
        let d = neg_div(p, q);
        let mut x = b - &(d * mu);
        x.mapv_inplace(|v| v.max(0.0));
        x
    };
    if mu <= 0.0 {
        return b.mapv(|v| v.max(0.0));
    }
    let dim = b.dim();
    let (mut p, mut q) = (Array2::zeros(dim), Array2::zeros(dim));
    let (mut r, mut s) = (p.clone(), q.clone());
    let mut t: f64 = 1.0;
    // the difference operator has norm^2 <= 8
    let step = 1.0 / (8.0 * mu);
    for _ in 0..iters {
        let x = primal(&r, &s);
        let (gp, gq) = grad(&x);
        let mut np = &r + &(gp * step);
        let mut nq = &s + &(gq * step);
        for (a, c) in np.iter_mut().zip(nq.iter_mut()) {
            let n = (*a * *a + *c * *c).sqrt().max(1.0);
            *a /= n;
            *c /= n;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let w = (t - 1.0) / t_next;
        r = &np + &((&np - &p) * w);
        s = &nq + &((&nq - &q) * w);
        p = np;
        q = nq;
        t = t_next;
    }
    primal(&p, &q)
}

struct System<'a> {
    geom: &'a ScanGeometry,
    views: &'a [usize],
    y: &'a [f64],
}

impl System<'_> {
    fn residual(&self, x: &Array2<f64>) -> Vec<f64> {
        let mut r = vec![0.0; self.y.len()];
        self.geom
            .project_views(x.as_slice().expect("standard layout"), self.views, &mut r);
        for (a, b) in r.iter_mut().zip(self.y) {
            *a -= b;
        }
        r
    }

    fn back(&self, r: &[f64]) -> Array2<f64> {
        let mut out = Array2::zeros(self.geom.grid());
        self.geom
            .back_project_views(r, self.views, out.as_slice_mut().expect("fresh array"));
        out
    }

    fn objective(&self, x: &Array2<f64>, lambda: f64) -> f64 {
        let r = self.residual(x);
        0.5 * r.iter().map(|v| v * v).sum::<f64>() + lambda * tv(x)
    }

    /// Upper bound on the largest eigenvalue of `P^T P`.
    fn lipschitz(&self, iters: usize) -> f64 {
        let (m1, m2) = self.geom.grid();
        let mut v = Array2::from_elem((m1, m2), 1.0 / ((m1 * m2) as f64).sqrt());
        let mut est = 0.0;
        for _ in 0..iters.max(1) {
            let mut pv = vec![0.0; self.y.len()];
            self.geom
                .project_views(v.as_slice().expect("standard layout"), self.views, &mut pv);
            let w = self.back(&pv);
            let n = w.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n == 0.0 {
                return 1.0;
            }
            est = n;
            v = w / n;
        }
        // the power estimate approaches the norm from below
        est * 1.05
    }
}

/// Reconstruct from `y` on `geom`, starting from zero.
pub fn fista_tv(geom: &ScanGeometry, y: &Sinogram, cfg: &FistaConfig) -> Result<FistaResult> {
    if !(cfg.lambda > 0.0) {
        return Err(BenchError::Lambda(cfg.lambda));
    }
    if y.n_det() != geom.n_det() || y.n_views() != y.views.len() {
        return Err(BenchError::Shape(
            y.data.dim(),
            (y.views.len(), geom.n_det()),
        ));
    }
    let yd = y.data.as_standard_layout();
    let sys = System {
        geom,
        views: y.views.indices(),
        y: yd.as_slice().expect("standard layout"),
    };
    let l = sys.lipschitz(cfg.power_iter);
    let mut x: Array2<f64> = Array2::zeros(geom.grid());
    let mut f_x = sys.objective(&x, cfg.lambda);
    let mut z_pt = x.clone();
    let mut t: f64 = 1.0;
    let mut objective = Vec::with_capacity(cfg.max_iter);
    for _ in 0..cfg.max_iter {
        let g = sys.back(&sys.residual(&z_pt));
        let b = &z_pt - &(g / l);
        let z = tv_prox(&b, cfg.lambda / l, cfg.inner_iter);
        let f_z = sys.objective(&z, cfg.lambda);
        let x_prev = x.clone();
        if f_z <= f_x {
            x = z.clone();
            f_x = f_z;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z_pt = &x + &((&z - &x) * (t / t_next)) + &((&x - &x_prev) * ((t - 1.0) / t_next));
        t = t_next;
        objective.push(f_x);
    }
    Ok(FistaResult {
        image: x,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_of_step_edge() {
        let x = Array2::from_shape_fn((4, 4), |(_, j)| if j < 2 { 0.0 } else { 1.0 });
        // one unit jump per row
        assert!((tv(&x) - 4.0).abs() < 1e-12);
        assert_eq!(tv(&Array2::from_elem((3, 5), 0.7)), 0.0);
    }

    #[test]
    fn neg_div_is_adjoint_of_grad() {
        let x = Array2::from_shape_fn((5, 6), |(i, j)| ((i * 13 + j * 7) % 5) as f64 - 2.0);
        let p = Array2::from_shape_fn((5, 6), |(i, j)| ((i + 2 * j) % 3) as f64);
        let q = Array2::from_shape_fn((5, 6), |(i, j)| ((3 * i + j) % 4) as f64 - 1.0);
        let (gp, gq) = grad(&x);
        // only differences inside the grid are paired with dual values
        let mask_p = Array2::from_shape_fn((5, 6), |(i, _)| (i + 1 < 5) as u8 as f64);
        let mask_q = Array2::from_shape_fn((5, 6), |(_, j)| (j + 1 < 6) as u8 as f64);
        let (p, q) = (p * &mask_p, q * &mask_q);
        let lhs = (&gp * &p).sum() + (&gq * &q).sum();
        let rhs = (&x * &neg_div(&p, &q)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn prox_with_zero_weight_clamps() {
        let b = Array2::from_shape_fn((3, 3), |(i, j)| i as f64 - j as f64);
        assert_eq!(tv_prox(&b, 0.0, 10), b.mapv(|v| v.max(0.0)));
    }

    #[test]
    fn prox_reduces_tv() {
        let b = Array2::from_shape_fn((8, 8), |(i, j)| 1.0 + 0.3 * (((i * 5 + j * 3) % 4) as f64));
        let x = tv_prox(&b, 0.5, 50);
        assert!(tv(&x) < tv(&b));
        assert!(x.iter().all(|&v| v >= 0.0));
    }
}
