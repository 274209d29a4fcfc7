//! Projection-domain refinement: the analytic error images that feed the
//! correction network.
//!
//! With `P_f` the full-view projector, `Sel` the row selection onto the
//! sparse subset (so `P_s = Sel P_f`), `F_s`/`F_f` the sparse/full-view FBP
//! and `I_u` the view interpolation, one stage computes from `x = x_{l-1}`:
//!
//! | channel | value |
//! |---------|-------|
//! | `x_prev` | `x` |
//! | `x_u` | `F_f(I_u y_s)` |
//! | `e_u` | `F_f(I_u P_s x - P_f x)` |
//! | `e_f` | `x - F_f P_f x` |
//! | `e_k` | `r - F_f P_f r` |
//! | `e_s` | `F_s(y_s - P_s x)` |
//! | `e_d` | `x - F_s P_s x` |
//! | `e_j` | `r - F_s P_s r` |
//!
//! where `r = x + e_s - e_d`. Every channel is linear in `(x, y_s)`.

use std::fmt;
use std::sync::Arc;

use mvms_diffcore::{LinearOp, Tape, Tensor, Var};
use mvms_tomo::{ScanGeometry, Sinogram, ViewSubset};
use ndarray::ArrayView2;

use crate::error::{CoreError, Result};
use crate::ops::{apply_op, image_to_tensor, Fbp, Project, SelectRows, Upsample};

/// One channel of the refined stack, in stack order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    XPrev,
    Xu,
    Eu,
    Ef,
    Ek,
    Es,
    Ed,
    Ej,
}

impl Channel {
    pub const ALL: [Channel; 8] = [
        Channel::XPrev,
        Channel::Xu,
        Channel::Eu,
        Channel::Ef,
        Channel::Ek,
        Channel::Es,
        Channel::Ed,
        Channel::Ej,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::XPrev => "x_prev",
            Channel::Xu => "x_u",
            Channel::Eu => "e_u",
            Channel::Ef => "e_f",
            Channel::Ek => "e_k",
            Channel::Es => "e_s",
            Channel::Ed => "e_d",
            Channel::Ej => "e_j",
        }
    }
}

/// A subset of [`Channel`]s, stored as a bitmask over stack positions.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChannelSet(u8);

impl ChannelSet {
    pub const ALL: ChannelSet = ChannelSet(0xff);

    /// `None` if the mask is empty or omits `x_prev`.
    pub fn from_mask(mask: u8) -> Option<Self> {
        (mask & 1 == 1).then_some(ChannelSet(mask))
    }

    pub fn of(channels: &[Channel]) -> Option<Self> {
        Self::from_mask(channels.iter().fold(0, |m, c| m | 1 << c.index()))
    }

    pub fn mask(self) -> u8 {
        self.0
    }

    pub fn contains(self, c: Channel) -> bool {
        self.0 & (1 << c.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn channels(self) -> Vec<Channel> {
        Channel::ALL
            .into_iter()
            .filter(|&c| self.contains(c))
            .collect()
    }
}

impl fmt::Debug for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.channels().iter().map(|c| c.name()).collect();
        write!(f, "ChannelSet{names:?}")
    }
}

impl Default for ChannelSet {
    fn default() -> Self {
        ChannelSet::ALL
    }
}

/// The seven ablation variants: which error groups enter the stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::A,
        Variant::B,
        Variant::C,
        Variant::D,
        Variant::E,
        Variant::F,
        Variant::G,
    ];

    pub fn channels(self) -> ChannelSet {
        use Channel::*;
        let list: &[Channel] = match self {
            Variant::A => &[XPrev],
            Variant::B => &[XPrev, Xu, Eu],
            Variant::C => &[XPrev, Xu, Eu, Ef, Ek],
            Variant::D => &[XPrev, Xu, Eu, Ef, Ek, Es],
            Variant::E => &[XPrev, Es],
            Variant::F => &[XPrev, Es, Ed, Ej],
            Variant::G => &Channel::ALL,
        };
        ChannelSet::of(list).expect("every variant keeps x_prev")
    }

    pub fn letter(self) -> char {
        (b'a' + self as u8) as char
    }

    pub fn parse(s: &str) -> Option<Self> {
        let mut chars = s.chars();
        let c = chars.next()?.to_ascii_lowercase();
        if chars.next().is_some() {
            return None;
        }
        Variant::ALL.into_iter().find(|v| v.letter() == c)
    }
}

/// Operator handles for one geometry and one sparse subset.
pub struct ViewOps {
    geom: Arc<ScanGeometry>,
    subset: ViewSubset,
    pub project_full: Arc<dyn LinearOp>,
    pub select: Arc<dyn LinearOp>,
    pub fbp_sparse: Arc<dyn LinearOp>,
    pub fbp_full: Arc<dyn LinearOp>,
    pub upsample: Arc<dyn LinearOp>,
}

impl fmt::Debug for ViewOps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ViewOps")
            .field("q1", &self.subset.len())
            .field("n_views", &self.geom.n_views())
            .finish()
    }
}

impl ViewOps {
    pub fn new(geom: Arc<ScanGeometry>, subset: ViewSubset) -> Result<Self> {
        if subset.n_full() != geom.n_views() {
            return Err(mvms_tomo::TomoError::InvalidSubset(format!(
                "subset is over {} views, geometry has {}",
                subset.n_full(),
                geom.n_views()
            ))
            .into());
        }
        let full = geom.full_subset();
        Ok(ViewOps {
            project_full: Arc::new(Project::new(geom.clone(), &full)),
            select: Arc::new(SelectRows::new(&subset, geom.n_det())),
            fbp_sparse: Arc::new(Fbp::new(geom.clone(), &subset)),
            fbp_full: Arc::new(Fbp::new(geom.clone(), &full)),
            upsample: Arc::new(Upsample::new(&geom, &subset)?),
            geom,
            subset,
        })
    }

    /// Operators for the floor-rule subset of `q1` views.
    pub fn decimated(geom: Arc<ScanGeometry>, q1: usize) -> Result<Self> {
        let subset = geom.sparse_subset(q1)?;
        Self::new(geom, subset)
    }

    pub fn geometry(&self) -> &Arc<ScanGeometry> {
        &self.geom
    }

    pub fn subset(&self) -> &ViewSubset {
        &self.subset
    }

    pub fn q1(&self) -> usize {
        self.subset.len()
    }

    /// Noiseless sparse measurement `P_s x`.
    pub fn simulate(&self, x: ArrayView2<f64>) -> Result<Sinogram> {
        Ok(self.geom.forward_project(x, &self.subset)?)
    }

    fn check_sinogram(&self, y: &Sinogram) -> Result<()> {
        if y.views != self.subset || y.n_det() != self.geom.n_det() {
            return Err(CoreError::SinogramShape {
                got: y.data.dim(),
                n_det: self.geom.n_det(),
            });
        }
        Ok(())
    }
}

/// Measurement-dependent quantities shared by every stage.
#[derive(Clone)]
pub struct StageContext {
    ops: Arc<ViewOps>,
    y_s: Tensor,
    x0: Tensor,
    x_u: Tensor,
}

impl fmt::Debug for StageContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StageContext")
            .field("ops", &self.ops)
            .finish_non_exhaustive()
    }
}

impl StageContext {
    pub fn new(ops: Arc<ViewOps>, y_s: &Sinogram) -> Result<Self> {
        ops.check_sinogram(y_s)?;
        let (q, n) = y_s.data.dim();
        let y = Tensor::new(vec![1, q, n], y_s.data.iter().copied().collect())?;
        let x0 = apply_op(ops.fbp_sparse.as_ref(), &y);
        let x_u = apply_op(ops.fbp_full.as_ref(), &apply_op(ops.upsample.as_ref(), &y));
        Ok(StageContext {
            ops,
            y_s: y,
            x0,
            x_u,
        })
    }

    pub fn ops(&self) -> &Arc<ViewOps> {
        &self.ops
    }

    /// `[1, q1, n_det]`.
    pub fn y_s(&self) -> &Tensor {
        &self.y_s
    }

    /// `F_s y_s`, the FBP initialisation.
    pub fn x0(&self) -> &Tensor {
        &self.x0
    }

    /// `F_f(I_u y_s)`.
    pub fn x_u(&self) -> &Tensor {
        &self.x_u
    }

    pub fn grid(&self) -> (usize, usize) {
        self.ops.geom.grid()
    }
}

/// Named outputs of [`refine_errors`]; only requested channels are `Some`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Refined {
    pub x_u: Option<Var>,
    pub e_u: Option<Var>,
    pub e_f: Option<Var>,
    pub e_k: Option<Var>,
    pub e_s: Option<Var>,
    pub e_d: Option<Var>,
    pub e_j: Option<Var>,
    /// `x + e_s - e_d`, present whenever `e_k` or `e_j` is.
    pub r_hat: Option<Var>,
}

/// Record the requested error images of `x` on the tape.
pub fn refine_errors(t: &mut Tape, x: Var, ctx: &StageContext, set: ChannelSet) -> Result<Refined> {
    use Channel::*;
    let ops = &ctx.ops;
    let want = |c| set.contains(c);
    let need_r = want(Ek) || want(Ej);
    let need_sparse = want(Es) || want(Ed) || want(Eu) || need_r;
    let need_px = need_sparse || want(Ef);

    let mut out = Refined::default();
    if want(Xu) {
        out.x_u = Some(t.constant(ctx.x_u.clone()));
    }
    if !need_px {
        return Ok(out);
    }
    let px = t.linear(x, ops.project_full.clone())?;
    if want(Ef) {
        let b = t.linear(px, ops.fbp_full.clone())?;
        out.e_f = Some(t.sub(x, b)?);
    }
    if !need_sparse {
        return Ok(out);
    }
    let psx = t.linear(px, ops.select.clone())?;
    if want(Eu) {
        let up = t.linear(psx, ops.upsample.clone())?;
        let diff = t.sub(up, px)?;
        out.e_u = Some(t.linear(diff, ops.fbp_full.clone())?);
    }
    if want(Es) || want(Ed) || need_r {
        // F_s(y_s - P_s x) = x0 - F_s P_s x by linearity; both terms are the
        // same computation on identical data when y_s = P_s x.
        let bs = t.linear(psx, ops.fbp_sparse.clone())?;
        let x0 = t.constant(ctx.x0.clone());
        let e_s = t.sub(x0, bs)?;
        let e_d = t.sub(x, bs)?;
        if want(Es) {
            out.e_s = Some(e_s);
        }
        if want(Ed) {
            out.e_d = Some(e_d);
        }
        if need_r {
            let a = t.add(x, e_s)?;
            let r = t.sub(a, e_d)?;
            out.r_hat = Some(r);
            let pr = t.linear(r, ops.project_full.clone())?;
            if want(Ek) {
                let b = t.linear(pr, ops.fbp_full.clone())?;
                out.e_k = Some(t.sub(r, b)?);
            }
            if want(Ej) {
                let psr = t.linear(pr, ops.select.clone())?;
                let b = t.linear(psr, ops.fbp_sparse.clone())?;
                out.e_j = Some(t.sub(r, b)?);
            }
        }
    }
    Ok(out)
}

/// Concatenate `x` and its requested error images in stack order.
pub fn assemble(t: &mut Tape, x: Var, ctx: &StageContext, set: ChannelSet) -> Result<Var> {
    let (m1, m2) = ctx.grid();
    let shape = t.value(x).shape();
    if shape != [1, m1, m2] {
        return Err(CoreError::ImageShape {
            expected: (m1, m2),
            got: (
                shape.get(1).copied().unwrap_or(0),
                shape.get(2).copied().unwrap_or(0),
            ),
        });
    }
    let r = refine_errors(t, x, ctx, set)?;
    let parts: Vec<Var> = set
        .channels()
        .into_iter()
        .map(|c| match c {
            Channel::XPrev => Some(x),
            Channel::Xu => r.x_u,
            Channel::Eu => r.e_u,
            Channel::Ef => r.e_f,
            Channel::Ek => r.e_k,
            Channel::Es => r.e_s,
            Channel::Ed => r.e_d,
            Channel::Ej => r.e_j,
        })
        .map(|v| v.expect("requested channel computed"))
        .collect();
    Ok(t.concat(&parts)?)
}

/// Evaluate the stack of a concrete image outside any training tape.
pub fn assemble_image(x: ArrayView2<f64>, ctx: &StageContext, set: ChannelSet) -> Result<Tensor> {
    let mut t = Tape::new();
    let xv = t.constant(image_to_tensor(x));
    let s = assemble(&mut t, xv, ctx, set)?;
    Ok(t.value(s).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use mvms_tomo::GeometryConfig;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(grid: usize, q1: usize) -> Arc<ViewOps> {
        let g = Arc::new(
            GeometryConfig::toy_fan_60()
                .with_grid(grid, grid)
                .build()
                .unwrap(),
        );
        Arc::new(ViewOps::decimated(g, q1).unwrap())
    }

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn variants_channel_counts() {
        let counts: Vec<usize> = Variant::ALL.iter().map(|v| v.channels().len()).collect();
        assert_eq!(counts, [1, 3, 5, 6, 2, 4, 8]);
        assert_eq!(Variant::parse("g"), Some(Variant::G));
        assert_eq!(Variant::parse("h"), None);
        assert!(ChannelSet::from_mask(0b10).is_none());
    }

    #[test]
    fn stack_has_eight_channels_and_zero_input_gives_zero() {
        let ops = toy(16, 15);
        let y = Sinogram::zeros(ops.subset().clone(), ops.geometry().n_det());
        let ctx = StageContext::new(ops, &y).unwrap();
        let s = assemble_image(Array2::zeros((16, 16)).view(), &ctx, ChannelSet::ALL).unwrap();
        assert_eq!(s.shape(), &[8, 16, 16]);
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noiseless_fixed_point_has_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ops = toy(16, 15);
        let x = random(16, &mut rng);
        let y = ops.simulate(x.view()).unwrap();
        let ctx = StageContext::new(ops, &y).unwrap();
        let s = assemble_image(x.view(), &ctx, ChannelSet::ALL).unwrap();
        let plane = 256;
        let e_s = &s.data()[Channel::Es.index() * plane..][..plane];
        assert!(e_s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_image_gives_x0_for_e_s() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ops = toy(16, 12);
        let y = ops.simulate(random(16, &mut rng).view()).unwrap();
        let ctx = StageContext::new(ops, &y).unwrap();
        let s = assemble_image(Array2::zeros((16, 16)).view(), &ctx, ChannelSet::ALL).unwrap();
        let plane = 256;
        assert_eq!(
            &s.data()[Channel::Es.index() * plane..][..plane],
            ctx.x0().data()
        );
        for c in [Channel::XPrev, Channel::Eu, Channel::Ef, Channel::Ed] {
            assert!(s.data()[c.index() * plane..][..plane]
                .iter()
                .all(|&v| v == 0.0));
        }
    }

    #[test]
    fn full_subset_makes_e_u_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ops = toy(16, 60);
        let x = random(16, &mut rng);
        let y = ops.simulate(x.view()).unwrap();
        let ctx = StageContext::new(ops, &y).unwrap();
        let s = assemble_image(x.view(), &ctx, ChannelSet::ALL).unwrap();
        let plane = 256;
        assert!(s.data()[Channel::Eu.index() * plane..][..plane]
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn reduced_sets_pick_matching_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ops = toy(16, 15);
        let x = random(16, &mut rng);
        let y = ops.simulate(random(16, &mut rng).view()).unwrap();
        let ctx = StageContext::new(ops, &y).unwrap();
        let full = assemble_image(x.view(), &ctx, ChannelSet::ALL).unwrap();
        for v in Variant::ALL {
            let set = v.channels();
            let part = assemble_image(x.view(), &ctx, set).unwrap();
            assert_eq!(part.shape()[0], set.len());
            for (k, c) in set.channels().into_iter().enumerate() {
                assert_eq!(
                    &part.data()[k * 256..][..256],
                    &full.data()[c.index() * 256..][..256],
                    "variant {v:?} channel {c:?}"
                );
            }
        }
    }
}
