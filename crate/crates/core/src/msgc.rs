//! Multi-scale geometric correction network.
//!
//! With `G` a pair of 3x3 conv + LeakyReLU layers, `S`/`S~` the 2x2 stride-2
//! restriction/prolongation, and `G~` the 2p -> p fusing pair:
//!
//! ```text
//! N_n(f) = G_{n+1}(f)
//! N_i(f) = G~_{i+1}( g ++ S~_{i+1}( h + N_{i+1}(h) ) ),  g = G_{i+1}(f), h = S_{i+1}(g)
//! D(r)   = C_a( c + N_0(c) ),                               c = C_m(r)
//! ```
//!
//! Odd feature sizes are replicate-padded before restriction and the
//! prolonged map is cropped back, so any grid passes through unchanged.

use mvms_diffcore::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CoreError, Result};

pub const DEFAULT_SLOPE: f64 = 0.01;

/// Hyperparameters fixing the parameter layout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MsgcDims {
    /// Feature width.
    pub p: usize,
    /// Number of coarse levels.
    pub n: usize,
    /// Channels of the refined stack.
    pub c_in: usize,
    pub slope: f64,
}

impl MsgcDims {
    pub fn new(p: usize, n: usize, c_in: usize) -> Result<Self> {
        let d = MsgcDims {
            p,
            n,
            c_in,
            slope: DEFAULT_SLOPE,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.n == 0 || !(1..=8).contains(&self.c_in) {
            return Err(CoreError::Dims(format!(
                "need p >= 1, n >= 1 and 1 <= c_in <= 8, got p={}, n={}, c_in={}",
                self.p, self.n, self.c_in
            )));
        }
        if !self.slope.is_finite() || self.slope < 0.0 {
            return Err(CoreError::Dims(format!("leaky slope {}", self.slope)));
        }
        Ok(())
    }
}

/// Closed-form number of scalar parameters.
pub fn param_count(p: usize, n: usize, c_in: usize) -> usize {
    let conv3 = |ci: usize, co: usize| 9 * ci * co + co;
    let conv2 = |ci: usize, co: usize| 4 * ci * co + co;
    let level = 2 * conv3(p, p) + conv3(2 * p, p) + conv3(p, p) + 2 * conv2(p, p);
    n * level + 2 * conv3(p, p) + conv3(c_in, p) + conv3(p, 1)
}

/// Kernel and bias of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T> {
    pub weight: T,
    pub bias: T,
}

/// Parameters of one coarse level `i` (1-based in the formulas).
#[derive(Clone, Debug, PartialEq)]
pub struct Level<T> {
    /// `G_i`: p -> p, p -> p.
    pub smooth: [Conv<T>; 2],
    /// `S_i`: `[p, p, 2, 2]`.
    pub restrict: Conv<T>,
    /// `S~_i`: `[p, p, 2, 2]` read as `[C_in, C_out, 2, 2]`.
    pub prolong: Conv<T>,
    /// `G~_i`: 2p -> p, p -> p.
    pub fuse: [Conv<T>; 2],
}

/// The full parameter set, generic over storage (`Tensor` or tape `Var`).
#[derive(Clone, Debug, PartialEq)]
pub struct Net<T> {
    /// `C_m`: c_in -> p.
    pub head: Conv<T>,
    pub levels: Vec<Level<T>>,
    /// `G_{n+1}`.
    pub deepest: [Conv<T>; 2],
    /// `C_a`: p -> 1.
    pub tail: Conv<T>,
}

/// Canonical flattened order of a [`Net`]; names double as checkpoint keys.
fn layout(dims: &MsgcDims) -> Vec<(String, Vec<usize>)> {
    let (p, c) = (dims.p, dims.c_in);
    let mut out = Vec::new();
    let mut conv = |name: String, w: Vec<usize>| {
        let co = if name.ends_with("prolong") {
            w[1]
        } else {
            w[0]
        };
        out.push((format!("{name}.weight"), w));
        out.push((format!("{name}.bias"), vec![co]));
    };
    conv("head".into(), vec![p, c, 3, 3]);
    for i in 1..=dims.n {
        conv(format!("level{i}.smooth0"), vec![p, p, 3, 3]);
        conv(format!("level{i}.smooth1"), vec![p, p, 3, 3]);
        conv(format!("level{i}.restrict"), vec![p, p, 2, 2]);
        conv(format!("level{i}.prolong"), vec![p, p, 2, 2]);
        conv(format!("level{i}.fuse0"), vec![p, 2 * p, 3, 3]);
        conv(format!("level{i}.fuse1"), vec![p, p, 3, 3]);
    }
    conv("deepest.smooth0".into(), vec![p, p, 3, 3]);
    conv("deepest.smooth1".into(), vec![p, p, 3, 3]);
    conv("tail".into(), vec![1, p, 3, 3]);
    out
}

impl<T> Net<T> {
    /// Entries in canonical order.
    pub fn flat(&self) -> Vec<&T> {
        fn push<'a, T>(v: &mut Vec<&'a T>, c: &'a Conv<T>) {
            v.push(&c.weight);
            v.push(&c.bias);
        }
        let mut v = Vec::new();
        push(&mut v, &self.head);
        for l in &self.levels {
            for c in [
                &l.smooth[0],
                &l.smooth[1],
                &l.restrict,
                &l.prolong,
                &l.fuse[0],
                &l.fuse[1],
            ] {
                push(&mut v, c);
            }
        }
        push(&mut v, &self.deepest[0]);
        push(&mut v, &self.deepest[1]);
        push(&mut v, &self.tail);
        v
    }

    pub fn flat_mut(&mut self) -> Vec<&mut T> {
        let mut v = Vec::new();
        fn push<'a, T>(v: &mut Vec<&'a mut T>, c: &'a mut Conv<T>) {
            v.push(&mut c.weight);
            v.push(&mut c.bias);
        }
        push(&mut v, &mut self.head);
        for l in &mut self.levels {
            let [s0, s1] = &mut l.smooth;
            push(&mut v, s0);
            push(&mut v, s1);
            push(&mut v, &mut l.restrict);
            push(&mut v, &mut l.prolong);
            let [f0, f1] = &mut l.fuse;
            push(&mut v, f0);
            push(&mut v, f1);
        }
        let [d0, d1] = &mut self.deepest;
        push(&mut v, d0);
        push(&mut v, d1);
        push(&mut v, &mut self.tail);
        v
    }

    /// Rebuild from entries in canonical order for `n` levels.
    pub fn from_flat(n: usize, items: impl IntoIterator<Item = T>) -> Option<Self> {
        let mut it = items.into_iter();
        let mut conv = || {
            Some(Conv {
                weight: it.next()?,
                bias: it.next()?,
            })
        };
        let head = conv()?;
        let mut levels = Vec::with_capacity(n);
        for _ in 0..n {
            let s0 = conv()?;
            let s1 = conv()?;
            let restrict = conv()?;
            let prolong = conv()?;
            let f0 = conv()?;
            let f1 = conv()?;
            levels.push(Level {
                smooth: [s0, s1],
                restrict,
                prolong,
                fuse: [f0, f1],
            });
        }
        let d0 = conv()?;
        let d1 = conv()?;
        let tail = conv()?;
        if it.next().is_some() {
            return None;
        }
        Some(Net {
            head,
            levels,
            deepest: [d0, d1],
            tail,
        })
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Net<U> {
        let items: Vec<U> = self.flat().into_iter().map(&mut f).collect();
        Net::from_flat(self.levels.len(), items).expect("same layout")
    }
}

/// Learnable parameters of the correction network.
#[derive(Clone, Debug, PartialEq)]
pub struct MsgcParams {
    pub dims: MsgcDims,
    pub net: Net<Tensor>,
}

impl MsgcParams {
    /// Kaiming (fan-in, normal) weights with LeakyReLU gain, zero biases.
    /// Fan-in is `shape[1] * kh * kw` for every kernel.
    pub fn init(dims: MsgcDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = (2.0 / (1.0 + dims.slope * dims.slope)).sqrt();
        let tensors = layout(&dims).into_iter().map(|(name, shape)| {
            if name.ends_with(".bias") {
                return Tensor::zeros(&shape);
            }
            let fan_in = shape[1] * shape[2] * shape[3];
            let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("positive std");
            Tensor::from_fn(&shape, |_| normal.sample(&mut rng))
        });
        let net = Net::from_flat(dims.n, tensors).expect("layout matches");
        Ok(MsgcParams { dims, net })
    }

    /// All-zero parameters.
    pub fn zeros(dims: MsgcDims) -> Result<Self> {
        dims.validate()?;
        let tensors = layout(&dims).into_iter().map(|(_, s)| Tensor::zeros(&s));
        let net = Net::from_flat(dims.n, tensors).expect("layout matches");
        Ok(MsgcParams { dims, net })
    }

    /// Assemble from named tensors, checking names and shapes in order.
    pub fn from_named(dims: MsgcDims, items: Vec<(String, Tensor)>) -> Result<Self> {
        dims.validate()?;
        let expect = layout(&dims);
        if items.len() != expect.len() {
            return Err(CoreError::Dims(format!(
                "expected {} tensors, got {}",
                expect.len(),
                items.len()
            )));
        }
        for ((name, t), (en, es)) in items.iter().zip(&expect) {
            if name != en || t.shape() != es.as_slice() {
                return Err(CoreError::Dims(format!(
                    "tensor `{name}` {:?} where `{en}` {es:?} was expected",
                    t.shape()
                )));
            }
        }
        let net = Net::from_flat(dims.n, items.into_iter().map(|(_, t)| t)).expect("checked");
        Ok(MsgcParams { dims, net })
    }

    pub fn names(&self) -> Vec<String> {
        layout(&self.dims).into_iter().map(|(n, _)| n).collect()
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        self.names().into_iter().zip(self.net.flat()).collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.net.flat()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.flat_mut()
    }

    pub fn count(&self) -> usize {
        self.net.flat().iter().map(|t| t.len()).sum()
    }

    /// Put every tensor on the tape, as leaves or as constants.
    pub fn bind(&self, t: &mut Tape, trainable: bool) -> Net<Var> {
        self.net.map(|x| {
            if trainable {
                t.leaf(x.clone())
            } else {
                t.constant(x.clone())
            }
        })
    }
}

fn conv_act(t: &mut Tape, x: Var, c: &Conv<Var>, slope: f64) -> Result<Var> {
    let y = t.conv3x3(x, c.weight, c.bias)?;
    Ok(t.leaky_relu(y, slope))
}

fn smooth(t: &mut Tape, x: Var, pair: &[Conv<Var>; 2], slope: f64) -> Result<Var> {
    let y = conv_act(t, x, &pair[0], slope)?;
    conv_act(t, y, &pair[1], slope)
}

/// `N_i` applied to a p-channel feature map; `i` ranges over `0..=n`.
pub fn apply_block(t: &mut Tape, net: &Net<Var>, slope: f64, i: usize, f: Var) -> Result<Var> {
    let n = net.levels.len();
    if i > n {
        return Err(CoreError::Dims(format!(
            "block index {i} exceeds depth {n}"
        )));
    }
    if i == n {
        return smooth(t, f, &net.deepest, slope);
    }
    let level = &net.levels[i];
    let g = smooth(t, f, &level.smooth, slope)?;
    let (_, h, w) = t.value(g).chw().expect("feature map");
    let padded = t.pad_even(g)?;
    let coarse = t.conv2x2_down(padded, level.restrict.weight, level.restrict.bias)?;
    let inner = apply_block(t, net, slope, i + 1, coarse)?;
    let corrected = t.add(coarse, inner)?;
    let fine = t.tconv2x2_up(corrected, level.prolong.weight, level.prolong.bias)?;
    let fine = t.crop(fine, h, w)?;
    let both = t.concat(&[g, fine])?;
    smooth(t, both, &level.fuse, slope)
}

/// `D(r) = C_a((I + N_0) C_m r)`, mapping a `[c_in, H, W]` stack to `[1, H, W]`.
pub fn apply_d(t: &mut Tape, net: &Net<Var>, dims: &MsgcDims, r: Var) -> Result<Var> {
    let c = t.value(r).chw().map_or(0, |s| s.0);
    if c != dims.c_in {
        return Err(CoreError::Channels {
            expected: dims.c_in,
            got: c,
        });
    }
    let feat = conv_act(t, r, &net.head, dims.slope)?;
    let corr = apply_block(t, net, dims.slope, 0, feat)?;
    let sum = t.add(feat, corr)?;
    conv_act(t, sum, &net.tail, dims.slope)
}
