use mvms_diffcore::Tensor;

use crate::error::{CoreError, Result};

/// Adam with bias correction over a fixed, ordered list of tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of completed updates.
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub const DEFAULT_LR: f64 = 1e-4;

    /// Zero moments shaped like `params`.
    pub fn new<'a>(lr: f64, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    /// One in-place update.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(CoreError::Optimizer(format!(
                "expected {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(CoreError::Optimizer(format!(
                    "shape mismatch: param {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::from_fn(&[2, 3], |i| i as f64);
        let orig = p.clone();
        let mut opt = Adam::new(1e-3, [&p]);
        for _ in 0..5 {
            opt.update(&mut [&mut p], &[Tensor::zeros(&[2, 3])])
                .unwrap();
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        // with a constant g, mhat = g and vhat = g^2 exactly after bias
        // correction, so each step is lr * |g| / (|g| + eps)
        let lr = 1e-3;
        let mut p = Tensor::zeros(&[3]);
        let g = Tensor::new(vec![3], vec![2.0, -0.5, 1e-3]).unwrap();
        let mut opt = Adam::new(lr, [&p]);
        let mut prev = p.clone();
        for k in 0..200 {
            opt.update(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
            for ((a, b), gv) in p.data().iter().zip(prev.data()).zip(g.data()) {
                let step = b - a;
                let want = lr * gv / (gv.abs() + 1e-8);
                assert!(
                    (step - want).abs() < 1e-12 * (k as f64 + 1.0),
                    "{step} vs {want}"
                );
            }
            prev = p.clone();
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Tensor::zeros(&[3]);
        let mut opt = Adam::new(1e-3, [&p]);
        assert!(opt.update(&mut [&mut p], &[Tensor::zeros(&[4])]).is_err());
        assert!(opt.update(&mut [], &[]).is_err());
        assert_eq!(opt.step, 0);
    }
}
