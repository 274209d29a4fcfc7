//! The unfolded reconstruction network: `n_s` stages of refinement followed
//! by correction, plus plug-and-play continuation of the same stage.

use std::collections::BTreeMap;
use std::sync::Arc;

use mvms_diffcore::{Tape, Tensor, Var};
use mvms_tomo::{ScanGeometry, Sinogram, ViewSubset};

use crate::error::{CoreError, Result};
use crate::msgc::{apply_d, MsgcDims, MsgcParams, Net};
use crate::refine::{assemble, ChannelSet, StageContext, ViewOps};

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub p: usize,
    pub n: usize,
    pub n_s: usize,
    pub slope: f64,
    pub channels: ChannelSet,
    /// One parameter set per stage instead of one shared set.
    pub unshared: bool,
    /// Start from a zero image rather than the sparse FBP.
    pub x0_zero: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            p: 32,
            n: 5,
            n_s: 7,
            slope: crate::msgc::DEFAULT_SLOPE,
            channels: ChannelSet::ALL,
            unshared: false,
            x0_zero: false,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self) -> MsgcDims {
        MsgcDims {
            p: self.p,
            n: self.n,
            c_in: self.channels.len(),
            slope: self.slope,
        }
    }

    pub fn param_sets(&self) -> usize {
        if self.unshared {
            self.n_s
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().validate()?;
        if self.n_s == 0 {
            return Err(CoreError::Dims("n_s must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parameters bound to one tape.
pub struct BoundParams {
    nets: Vec<Net<Var>>,
}

impl BoundParams {
    /// Parameter set used by stage `k` (0-based); stages past the last set
    /// reuse it.
    pub fn stage(&self, k: usize) -> &Net<Var> {
        &self.nets[k.min(self.nets.len() - 1)]
    }

    pub fn all(&self) -> &[Net<Var>] {
        &self.nets
    }
}

/// What a PnP callback wants next.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PnpSignal {
    pub metric: Option<f64>,
    pub stop: bool,
}

impl PnpSignal {
    pub fn go(metric: Option<f64>) -> Self {
        PnpSignal {
            metric,
            stop: false,
        }
    }
}

/// Images and metrics of a PnP run; entry `k` belongs to iteration `k + 1`.
#[derive(Clone, Debug, Default)]
pub struct PnpTrajectory {
    pub images: Vec<Tensor>,
    pub metrics: Vec<Option<f64>>,
}

#[derive(Debug)]
pub struct MvmsModel {
    config: ModelConfig,
    params: Vec<MsgcParams>,
    geom: Arc<ScanGeometry>,
    registry: BTreeMap<usize, Arc<ViewOps>>,
}

impl MvmsModel {
    /// Fresh model with Kaiming-initialised parameters. Unshared sets use
    /// seeds `seed, seed + 1, ...`.
    pub fn new(config: ModelConfig, geom: Arc<ScanGeometry>, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = (0..config.param_sets())
            .map(|k| MsgcParams::init(config.dims(), seed.wrapping_add(k as u64)))
            .collect::<Result<_>>()?;
        Self::with_params(config, geom, params)
    }

    pub fn with_params(
        config: ModelConfig,
        geom: Arc<ScanGeometry>,
        params: Vec<MsgcParams>,
    ) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_sets() || params.iter().any(|p| p.dims != config.dims()) {
            return Err(CoreError::Dims(format!(
                "expected {} parameter sets with dims {:?}",
                config.param_sets(),
                config.dims()
            )));
        }
        Ok(MvmsModel {
            config,
            params,
            geom,
            registry: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn geometry(&self) -> &Arc<ScanGeometry> {
        &self.geom
    }

    pub fn params(&self) -> &[MsgcParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [MsgcParams] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(MsgcParams::count).sum()
    }

    /// Cache operators for `subset` under its view count.
    pub fn register_geometry(&mut self, geom: Arc<ScanGeometry>, subset: ViewSubset) -> Result<()> {
        let q1 = subset.len();
        if let Some(existing) = self.registry.get(&q1) {
            let same =
                existing.subset() == &subset && existing.geometry().config() == geom.config();
            return if same {
                Ok(())
            } else {
                Err(CoreError::GeometryConflict { q1 })
            };
        }
        self.registry
            .insert(q1, Arc::new(ViewOps::new(geom, subset)?));
        Ok(())
    }

    /// Register the floor-rule subsets of the model geometry for each count.
    pub fn register_view_counts(&mut self, counts: &[usize]) -> Result<()> {
        for &q in counts {
            let subset = self.geom.sparse_subset(q)?;
            self.register_geometry(self.geom.clone(), subset)?;
        }
        Ok(())
    }

    pub fn registered(&self) -> Vec<usize> {
        self.registry.keys().copied().collect()
    }

    /// Registered operators for `q1` views, or fresh floor-rule operators on
    /// the model geometry.
    pub fn ops_for(&self, q1: usize) -> Result<Arc<ViewOps>> {
        match self.registry.get(&q1) {
            Some(ops) => Ok(ops.clone()),
            None => Ok(Arc::new(ViewOps::decimated(self.geom.clone(), q1)?)),
        }
    }

    /// Context for a measured sinogram, resolving its operators by view count.
    pub fn context(&self, y_s: &Sinogram) -> Result<StageContext> {
        let ops = self.ops_for(y_s.n_views())?;
        StageContext::new(ops, y_s)
    }

    pub fn bind(&self, t: &mut Tape, trainable: bool) -> BoundParams {
        BoundParams {
            nets: self.params.iter().map(|p| p.bind(t, trainable)).collect(),
        }
    }

    /// Initial iterate for `ctx`.
    pub fn initial(&self, t: &mut Tape, ctx: &StageContext) -> Var {
        if self.config.x0_zero {
            t.constant(Tensor::zeros(ctx.x0().shape()))
        } else {
            t.constant(ctx.x0().clone())
        }
    }

    /// One stage `x_k = D(assemble(x_{k-1}))` using parameter set `k`.
    pub fn stage(
        &self,
        t: &mut Tape,
        bound: &BoundParams,
        ctx: &StageContext,
        k: usize,
        x_prev: Var,
    ) -> Result<Var> {
        let r = assemble(t, x_prev, ctx, self.config.channels)?;
        apply_d(t, bound.stage(k), &self.config.dims(), r)
    }

    /// Every stage output `x_1..x_{n_s}` recorded on `t`.
    pub fn forward_tape(
        &self,
        t: &mut Tape,
        bound: &BoundParams,
        ctx: &StageContext,
    ) -> Result<Vec<Var>> {
        let mut x = self.initial(t, ctx);
        let mut outs = Vec::with_capacity(self.config.n_s);
        for k in 0..self.config.n_s {
            x = self.stage(t, bound, ctx, k, x)?;
            outs.push(x);
        }
        Ok(outs)
    }

    /// Reconstruction `x_{n_s}` as a `[1, m1, m2]` tensor.
    pub fn forward(&self, y_s: &Sinogram) -> Result<Tensor> {
        let ctx = self.context(y_s)?;
        self.forward_ctx(&ctx)
    }

    pub fn forward_ctx(&self, ctx: &StageContext) -> Result<Tensor> {
        let mut t = Tape::new();
        let bound = self.bind(&mut t, false);
        let outs = self.forward_tape(&mut t, &bound, ctx)?;
        Ok(t.value(*outs.last().expect("n_s >= 1")).clone())
    }

    /// Apply the stage up to `max_iters` times. Iteration `k` uses the
    /// parameter set of stage `k`, clamped to the last one.
    pub fn run_pnp(
        &self,
        ctx: &StageContext,
        max_iters: usize,
        mut callback: impl FnMut(usize, &Tensor) -> PnpSignal,
    ) -> Result<PnpTrajectory> {
        if max_iters == 0 {
            return Err(CoreError::NoIterations);
        }
        let mut traj = PnpTrajectory::default();
        let mut t = Tape::new();
        let mut current = self.initial(&mut t, ctx);
        let mut current_value = t.value(current).clone();
        for k in 0..max_iters {
            // a fresh tape per iteration keeps memory flat
            let mut t = Tape::new();
            let bound = self.bind(&mut t, false);
            current = t.constant(current_value);
            let next = self.stage(&mut t, &bound, ctx, k, current)?;
            current_value = t.value(next).clone();
            let signal = callback(k + 1, &current_value);
            traj.images.push(current_value.clone());
            traj.metrics.push(signal.metric);
            if signal.stop {
                break;
            }
        }
        Ok(traj)
    }
}
