use std::fmt;
use std::sync::Arc;

use crate::conv::{self, Dims};
use crate::error::{DiffError, Result};
use crate::tensor::Tensor;

/// A matrix-free linear map between `[C, H, W]` tensors with its transpose.
pub trait LinearOp: Send + Sync {
    fn input_shape(&self) -> [usize; 3];
    fn output_shape(&self) -> [usize; 3];
    /// `out = A x`; `out` must be fully overwritten.
    fn apply(&self, x: &[f64], out: &mut [f64]);
    /// `out = A^T y`; `out` must be fully overwritten.
    fn apply_transpose(&self, y: &[f64], out: &mut [f64]);
    fn name(&self) -> &str {
        "linear"
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv3x3 { x: Var, w: Var, b: Var },
    Down2 { x: Var, w: Var, b: Var },
    Up2 { x: Var, w: Var, b: Var },
    LeakyRelu { x: Var, slope: f64 },
    Concat { parts: Vec<Var> },
    Linear { x: Var, op: Arc<dyn LinearOp> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Abs(Var),
    Mean(Var),
    Sum(Var),
    PadEven(Var),
    Crop(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records one forward pass. Single writer; build a fresh tape per pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("backward_done", &self.backward_done)
            .finish()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(DiffError::Shape {
            op,
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn dims3(op: &'static str, t: &Tensor) -> Result<Dims> {
    t.chw()
        .map(|(c, h, w)| Dims { c, h, w })
        .ok_or_else(|| DiffError::Shape {
            op,
            expected: vec![0, 0, 0],
            got: t.shape().to_vec(),
        })
}

/// Validate a `[a, b, k, k]` kernel and `[c_out]` bias; returns `(a, b)`.
fn kernel_dims(op: &'static str, w: &Tensor, b: &Tensor, k: usize) -> Result<(usize, usize)> {
    match *w.shape() {
        [a, bb, kh, kw] if kh == k && kw == k => {
            let _ = b;
            Ok((a, bb))
        }
        _ => Err(DiffError::Shape {
            op,
            expected: vec![0, 0, k, k],
            got: w.shape().to_vec(),
        }),
    }
}

fn check_bias(op: &'static str, b: &Tensor, c_out: usize) -> Result<()> {
    if b.shape() != [c_out] {
        return Err(DiffError::Shape {
            op,
            expected: vec![c_out],
            got: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable input (parameter or variable of interest).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input; gradients are not propagated into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of the backward root w.r.t. `v`, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Like [`Tape::grad`] but returns zeros for nodes no gradient reached.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        const OP: &str = "conv3x3";
        let d = dims3(OP, self.value(x))?;
        let (co, ci) = kernel_dims(OP, self.value(w), self.value(b), 3)?;
        if ci != d.c {
            return Err(DiffError::Channels {
                op: OP,
                expected: ci,
                got: d.c,
            });
        }
        check_bias(OP, self.value(b), co)?;
        let out = conv::conv3x3(
            self.value(x).data(),
            d,
            self.value(w).data(),
            self.value(b).data(),
            co,
        );
        let value = Tensor::new(vec![co, d.h, d.w], out)?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(value, Op::Conv3x3 { x, w, b }, rg))
    }

    pub fn conv2x2_down(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        const OP: &str = "conv2x2_down";
        let d = dims3(OP, self.value(x))?;
        let (co, ci) = kernel_dims(OP, self.value(w), self.value(b), 2)?;
        if ci != d.c {
            return Err(DiffError::Channels {
                op: OP,
                expected: ci,
                got: d.c,
            });
        }
        check_bias(OP, self.value(b), co)?;
        if d.h % 2 != 0 || d.w % 2 != 0 {
            return Err(DiffError::OddSize {
                op: OP,
                h: d.h,
                w: d.w,
            });
        }
        let out = conv::down2(
            self.value(x).data(),
            d,
            self.value(w).data(),
            self.value(b).data(),
            co,
        );
        let value = Tensor::new(vec![co, d.h / 2, d.w / 2], out)?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(value, Op::Down2 { x, w, b }, rg))
    }

    /// Transposed 2x2 stride-2 convolution. The kernel is `[C_in, C_out, 2, 2]`.
    pub fn tconv2x2_up(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        const OP: &str = "tconv2x2_up";
        let d = dims3(OP, self.value(x))?;
        let (ci, co) = kernel_dims(OP, self.value(w), self.value(b), 2)?;
        if ci != d.c {
            return Err(DiffError::Channels {
                op: OP,
                expected: ci,
                got: d.c,
            });
        }
        check_bias(OP, self.value(b), co)?;
        let out = conv::up2(
            self.value(x).data(),
            d,
            self.value(w).data(),
            self.value(b).data(),
            co,
        );
        let value = Tensor::new(vec![co, d.h * 2, d.w * 2], out)?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(value, Op::Up2 { x, w, b }, rg))
    }

    /// `max(x, slope * x)`; the derivative at 0 takes the positive branch.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let src = self.value(x);
        let data = src
            .data()
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(&[x]);
        self.push(value, Op::LeakyRelu { x, slope }, rg)
    }

    /// Stack `[C_i, H, W]` tensors along the channel axis, in argument order.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        const OP: &str = "concat";
        let first = *parts.first().ok_or(DiffError::Empty(OP))?;
        let d0 = dims3(OP, self.value(first))?;
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let d = dims3(OP, self.value(p))?;
            if (d.h, d.w) != (d0.h, d0.w) {
                return Err(DiffError::Shape {
                    op: OP,
                    expected: vec![d.c, d0.h, d0.w],
                    got: self.value(p).shape().to_vec(),
                });
            }
            channels += d.c;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![channels, d0.h, d0.w], data)?;
        let rg = self.needs(parts);
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Apply a wrapped linear operator; its transpose is used on the way back.
    pub fn linear(&mut self, x: Var, op: Arc<dyn LinearOp>) -> Result<Var> {
        let shape = self.value(x).shape();
        if shape != op.input_shape() {
            return Err(DiffError::Shape {
                op: "linear",
                expected: op.input_shape().to_vec(),
                got: shape.to_vec(),
            });
        }
        let out_shape = op.output_shape();
        let mut out = vec![0.0; out_shape.iter().product()];
        op.apply(self.value(x).data(), &mut out);
        let value = Tensor::new(out_shape.to_vec(), out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Linear { x, op }, rg))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        node: Op,
    ) -> Result<Var> {
        same_shape(op, self.value(a), self.value(b))?;
        let ta = self.value(a);
        let tb = self.value(b);
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, node, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, node: Op) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(&[x]);
        self.push(value, node, rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, |v| factor * v, Op::Scale(x, factor))
    }

    /// `x + c` elementwise.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::Offset(x))
    }

    /// `|x|`; the subgradient at 0 is taken as 0.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Replicate-pad the last row/column so both spatial sizes are even.
    pub fn pad_even(&mut self, x: Var) -> Result<Var> {
        let d = dims3("pad_even", self.value(x))?;
        let (h2, w2) = (d.h + d.h % 2, d.w + d.w % 2);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(d.c * h2 * w2);
        for c in 0..d.c {
            for y in 0..h2 {
                let sy = y.min(d.h - 1);
                for xx in 0..w2 {
                    data.push(src[c * d.plane() + sy * d.w + xx.min(d.w - 1)]);
                }
            }
        }
        let value = Tensor::new(vec![d.c, h2, w2], data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::PadEven(x), rg))
    }

    /// Keep the top-left `h x w` window.
    pub fn crop(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let d = dims3("crop", self.value(x))?;
        if h > d.h || w > d.w {
            return Err(DiffError::Shape {
                op: "crop",
                expected: vec![d.c, h, w],
                got: self.value(x).shape().to_vec(),
            });
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(d.c * h * w);
        for c in 0..d.c {
            for y in 0..h {
                data.extend_from_slice(&src[c * d.plane() + y * d.w..][..w]);
            }
        }
        let value = Tensor::new(vec![d.c, h, w], data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Crop(x), rg))
    }

    fn accumulate(&mut self, v: Var, g: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot @ None => {
                let shape = self.nodes[v.0].value.shape().to_vec();
                *slot = Some(Tensor::new(shape, g).expect("gradient shape"));
            }
        }
    }

    /// Reverse sweep from a scalar root. May be run once per tape.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.backward_done {
            return Err(DiffError::BackwardTwice);
        }
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(DiffError::NonScalarRoot(rv.shape().to_vec()));
        }
        self.backward_done = true;
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(Tensor::new(rv.shape().to_vec(), vec![1.0])?);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &Tensor) {
        let gd = g.data();
        // Collect (target, contribution) first so the node borrow ends before
        // accumulation.
        let mut out: Vec<(Var, Vec<f64>)> = Vec::new();
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv3x3 { x, w, b } => {
                let xv = &self.nodes[x.0].value;
                let wv = &self.nodes[w.0].value;
                let d = dims3("conv3x3", xv).expect("checked");
                let co = wv.shape()[0];
                if self.nodes[x.0].requires_grad {
                    out.push((*x, conv::conv3x3_grad_input(gd, d, wv.data(), co)));
                }
                if self.nodes[w.0].requires_grad {
                    out.push((*w, conv::conv3x3_grad_weight(gd, xv.data(), d, co)));
                }
                if self.nodes[b.0].requires_grad {
                    out.push((*b, conv::channel_sums(gd, co)));
                }
            }
            Op::Down2 { x, w, b } => {
                let xv = &self.nodes[x.0].value;
                let wv = &self.nodes[w.0].value;
                let d = dims3("conv2x2_down", xv).expect("checked");
                let co = wv.shape()[0];
                if self.nodes[x.0].requires_grad {
                    out.push((*x, conv::down2_grad_input(gd, d, wv.data(), co)));
                }
                if self.nodes[w.0].requires_grad {
                    out.push((*w, conv::down2_grad_weight(gd, xv.data(), d, co)));
                }
                if self.nodes[b.0].requires_grad {
                    out.push((*b, conv::channel_sums(gd, co)));
                }
            }
            Op::Up2 { x, w, b } => {
                let xv = &self.nodes[x.0].value;
                let wv = &self.nodes[w.0].value;
                let d = dims3("tconv2x2_up", xv).expect("checked");
                let co = wv.shape()[1];
                if self.nodes[x.0].requires_grad {
                    out.push((*x, conv::up2_grad_input(gd, d, wv.data(), co)));
                }
                if self.nodes[w.0].requires_grad {
                    out.push((*w, conv::up2_grad_weight(gd, xv.data(), d, co)));
                }
                if self.nodes[b.0].requires_grad {
                    out.push((*b, conv::channel_sums(gd, co)));
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.nodes[x.0].value.data();
                let gx = xv
                    .iter()
                    .zip(gd)
                    .map(|(&v, &gv)| if v >= 0.0 { gv } else { slope * gv })
                    .collect();
                out.push((*x, gx));
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    out.push((p, gd[offset..offset + n].to_vec()));
                    offset += n;
                }
            }
            Op::Linear { x, op } => {
                let mut gx = vec![0.0; self.nodes[x.0].value.len()];
                op.apply_transpose(gd, &mut gx);
                out.push((*x, gx));
            }
            Op::Add(a, b) => {
                out.push((*a, gd.to_vec()));
                out.push((*b, gd.to_vec()));
            }
            Op::Sub(a, b) => {
                out.push((*a, gd.to_vec()));
                out.push((*b, gd.iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                out.push((*a, gd.iter().zip(bv).map(|(g, y)| g * y).collect()));
                out.push((*b, gd.iter().zip(av).map(|(g, x)| g * x).collect()));
            }
            Op::Div(a, b) => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                out.push((*a, gd.iter().zip(bv).map(|(g, y)| g / y).collect()));
                out.push((
                    *b,
                    gd.iter()
                        .zip(av.iter().zip(bv))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect(),
                ));
            }
            Op::Scale(x, f) => out.push((*x, gd.iter().map(|g| g * f).collect())),
            Op::Offset(x) => out.push((*x, gd.to_vec())),
            Op::Abs(x) => {
                let xv = self.nodes[x.0].value.data();
                let gx = xv
                    .iter()
                    .zip(gd)
                    .map(|(&v, &gv)| {
                        if v > 0.0 {
                            gv
                        } else if v < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })
                    .collect();
                out.push((*x, gx));
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.len();
                out.push((*x, vec![gd[0]; n]));
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len();
                out.push((*x, vec![gd[0] / n as f64; n]));
            }
            Op::PadEven(x) => {
                let d = dims3("pad_even", &self.nodes[x.0].value).expect("checked");
                let (h2, w2) = (d.h + d.h % 2, d.w + d.w % 2);
                let mut gx = vec![0.0; d.c * d.plane()];
                for c in 0..d.c {
                    for y in 0..h2 {
                        let sy = y.min(d.h - 1);
                        for xx in 0..w2 {
                            gx[c * d.plane() + sy * d.w + xx.min(d.w - 1)] +=
                                gd[(c * h2 + y) * w2 + xx];
                        }
                    }
                }
                out.push((*x, gx));
            }
            Op::Crop(x) => {
                let d = dims3("crop", &self.nodes[x.0].value).expect("checked");
                let (_, h, w) = node.value.chw().expect("rank 3");
                let mut gx = vec![0.0; d.c * d.plane()];
                for c in 0..d.c {
                    for y in 0..h {
                        gx[c * d.plane() + y * d.w..][..w]
                            .copy_from_slice(&gd[(c * h + y) * w..][..w]);
                    }
                }
                out.push((*x, gx));
            }
        }
        for (v, gv) in out {
            self.accumulate(v, gv);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(c: usize, h: usize, w: usize, f: impl Fn(usize) -> f64) -> Tensor {
        Tensor::from_fn(&[c, h, w], f)
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut t = Tape::new();
        let xv = img(1, 4, 5, |i| i as f64 * 0.3 - 1.0);
        let x = t.constant(xv.clone());
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let w = t.constant(k);
        let b = t.constant(Tensor::zeros(&[1]));
        let y = t.conv3x3(x, w, b).unwrap();
        assert_eq!(t.value(y), &xv);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let mut t = Tape::new();
        let x = t.constant(img(2, 3, 3, |i| i as f64));
        let w = t.constant(Tensor::zeros(&[3, 2, 3, 3]));
        let b = t.constant(Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap());
        let y = t.conv3x3(x, w, b).unwrap();
        let v = t.value(y);
        assert_eq!(v.shape(), &[3, 3, 3]);
        for c in 0..3 {
            assert!(v.data()[c * 9..(c + 1) * 9]
                .iter()
                .all(|&z| z == [0.5, -1.0, 2.0][c]));
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let mut t = Tape::new();
        let x = t.constant(img(2, 3, 3, |_| 0.0));
        let w = t.constant(Tensor::zeros(&[1, 3, 3, 3]));
        let b = t.constant(Tensor::zeros(&[1]));
        assert!(matches!(
            t.conv3x3(x, w, b),
            Err(DiffError::Channels {
                expected: 3,
                got: 2,
                ..
            })
        ));
        let w2 = t.constant(Tensor::zeros(&[1, 3, 2, 2]));
        assert!(t.conv2x2_down(x, w2, b).is_err());
        assert!(t.tconv2x2_up(x, w2, b).is_err());
    }

    #[test]
    fn down_of_constant_with_ones_kernel() {
        let mut t = Tape::new();
        let x = t.constant(img(1, 4, 6, |_| 1.5));
        let w = t.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let b = t.constant(Tensor::zeros(&[1]));
        let y = t.conv2x2_down(x, w, b).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 2, 3]);
        assert!(t.value(y).data().iter().all(|&v| v == 6.0));
        let z = t.constant(img(1, 4, 6, |_| 0.0));
        let bias = t.constant(Tensor::full(&[1], 0.25));
        let yz = t.conv2x2_down(z, w, bias).unwrap();
        assert!(t.value(yz).data().iter().all(|&v| v == 0.25));
        let up = t.tconv2x2_up(yz, w, bias).unwrap();
        assert_eq!(t.value(up).shape(), &[1, 4, 6]);
        let odd = t.constant(img(1, 3, 4, |_| 0.0));
        assert!(matches!(
            t.conv2x2_down(odd, w, b),
            Err(DiffError::OddSize { .. })
        ));
    }

    #[test]
    fn leaky_relu_values() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = t.leaky_relu(x, 0.01);
        assert_eq!(t.value(y).data(), &[-0.01, 0.0, 2.0]);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[0.01, 1.0, 1.0]);
    }

    #[test]
    fn concat_shapes_and_routing() {
        let mut t = Tape::new();
        let a = t.leaf(img(3, 2, 2, |i| i as f64));
        let b = t.leaf(img(5, 2, 2, |i| -(i as f64)));
        let single = t.concat(&[a]).unwrap();
        assert_eq!(t.value(single), t.value(a));
        let c = t.concat(&[a, b]).unwrap();
        assert_eq!(t.value(c).shape(), &[8, 2, 2]);
        let s = t.sum(c);
        t.backward(s).unwrap();
        assert!(t.grad(a).unwrap().data().iter().all(|&g| g == 1.0));
        assert!(t.grad(b).unwrap().data().iter().all(|&g| g == 1.0));
        let mut t2 = Tape::new();
        let p = t2.leaf(img(1, 2, 2, |_| 0.0));
        let q = t2.leaf(img(1, 2, 3, |_| 0.0));
        assert!(t2.concat(&[p, q]).is_err());
        assert_eq!(t2.concat(&[]), Err(DiffError::Empty("concat")));
    }

    #[test]
    fn sum_and_half_square_gradients() {
        let mut t = Tape::new();
        let xv = img(2, 3, 3, |i| (i as f64 * 0.7).sin());
        let x = t.leaf(xv.clone());
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert!(t.grad(x).unwrap().data().iter().all(|&g| g == 1.0));

        let mut t = Tape::new();
        let x = t.leaf(xv.clone());
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        let half = t.scale(s, 0.5);
        t.backward(half).unwrap();
        assert_eq!(t.grad(x).unwrap(), &xv);
    }

    #[test]
    fn backward_errors() {
        let mut t = Tape::new();
        let x = t.leaf(img(1, 2, 2, |_| 1.0));
        assert!(matches!(t.backward(x), Err(DiffError::NonScalarRoot(_))));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.backward(s), Err(DiffError::BackwardTwice));
    }

    #[test]
    fn pad_and_crop_round_trip() {
        let mut t = Tape::new();
        let x = t.leaf(img(2, 3, 5, |i| i as f64));
        let p = t.pad_even(x).unwrap();
        assert_eq!(t.value(p).shape(), &[2, 4, 6]);
        // replicated corner
        assert_eq!(t.value(p).data()[23], t.value(x).data()[14]);
        let c = t.crop(p, 3, 5).unwrap();
        assert_eq!(t.value(c), t.value(x));
        let s = t.sum(p);
        t.backward(s).unwrap();
        // corner pixel receives itself, its two edge copies and the corner copy
        assert_eq!(t.grad(x).unwrap().data()[14], 4.0);
        assert_eq!(t.grad(x).unwrap().data()[0], 1.0);
    }

    struct Doubler;
    impl LinearOp for Doubler {
        fn input_shape(&self) -> [usize; 3] {
            [1, 2, 2]
        }
        fn output_shape(&self) -> [usize; 3] {
            [1, 1, 2]
        }
        fn apply(&self, x: &[f64], out: &mut [f64]) {
            out[0] = 2.0 * (x[0] + x[1]);
            out[1] = x[3];
        }
        fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
            out.copy_from_slice(&[2.0 * y[0], 2.0 * y[0], 0.0, y[1]]);
        }
    }

    #[test]
    fn linear_node_uses_transpose() {
        let mut t = Tape::new();
        let x = t.leaf(img(1, 2, 2, |i| i as f64 + 1.0));
        let y = t.linear(x, Arc::new(Doubler)).unwrap();
        assert_eq!(t.value(y).data(), &[6.0, 4.0]);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2.0, 2.0, 0.0, 1.0]);
        let bad = t.leaf(img(1, 3, 2, |_| 0.0));
        assert!(t.linear(bad, Arc::new(Doubler)).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(img(1, 2, 2, |_| 3.0));
        let x = t.leaf(img(1, 2, 2, |_| 1.0));
        let y = t.mul(c, x).unwrap();
        let s = t.mean(y);
        t.backward(s).unwrap();
        assert!(t.grad(c).is_none());
        assert!(t.grad(x).unwrap().data().iter().all(|&g| g == 0.75));
    }
}
