//! Supervised multi-view training and unsupervised fine-tuning.

use std::io::Write;

use mvms_diffcore::{Tape, Tensor};
use mvms_tomo::Sinogram;
use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::Adam;
use crate::checkpoint::{Checkpoint, RngState};
use crate::error::{CoreError, Result};
use crate::loss::{total_loss, unsupervised_loss, LossConfig, LossTerms};
use crate::model::MvmsModel;
use crate::ops::image_to_tensor;
use crate::refine::{StageContext, ViewOps};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// View counts sampled uniformly per step.
    pub view_counts: Vec<usize>,
    pub lr: f64,
    pub loss: LossConfig,
    pub seed: u64,
    /// Random horizontal and vertical flips of the target.
    pub flips: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            view_counts: vec![],
            lr: Adam::DEFAULT_LR,
            loss: LossConfig::default(),
            seed: 0,
            flips: true,
        }
    }
}

/// Mirror flags applied to a training sample before measurement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Flips {
    /// Reverse columns.
    pub horizontal: bool,
    /// Reverse rows.
    pub vertical: bool,
}

impl Flips {
    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut v = x;
        if self.horizontal {
            v = v.slice_move(s![.., ..;-1]);
        }
        if self.vertical {
            v = v.slice_move(s![..;-1, ..]);
        }
        v.to_owned()
    }
}

/// Source of supervised samples: a target image and its sparse measurement.
pub trait Dataset {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sample `idx`, flipped by `flips`, measured on the views of `ops`.
    fn sample(&self, idx: usize, flips: Flips, ops: &ViewOps) -> Result<(Array2<f64>, Sinogram)>;
}

/// Plain images measured with the model's own projector.
impl Dataset for [Array2<f64>] {
    fn len(&self) -> usize {
        <[Array2<f64>]>::len(self)
    }

    fn sample(&self, idx: usize, flips: Flips, ops: &ViewOps) -> Result<(Array2<f64>, Sinogram)> {
        let target = flips.apply(self[idx].view());
        let y = ops.simulate(target.view())?;
        Ok((target, y))
    }
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub view_count: usize,
    pub loss: f64,
    pub l1: f64,
    pub ssim_term: f64,
}

impl StepLog {
    pub const HEADER: &'static str = "step\tview_count\tloss\tl1\tssim_term";

    pub fn line(&self) -> String {
        format!(
            "{}\t{}\t{:.10e}\t{:.10e}\t{:.10e}",
            self.step, self.view_count, self.loss, self.l1, self.ssim_term
        )
    }
}

/// Owns a model together with its optimizer and sampling state.
#[derive(Debug)]
pub struct Trainer {
    model: MvmsModel,
    adam: Adam,
    rng: ChaCha8Rng,
    step: u64,
    cfg: TrainConfig,
}

impl Trainer {
    /// Every schedule view count must already be registered on `model`.
    pub fn new(model: MvmsModel, cfg: TrainConfig) -> Result<Self> {
        let adam = Adam::new(cfg.lr, model.params().iter().flat_map(|p| p.tensors()));
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self::assemble(model, adam, rng, 0, cfg)
    }

    fn assemble(
        model: MvmsModel,
        adam: Adam,
        rng: ChaCha8Rng,
        step: u64,
        cfg: TrainConfig,
    ) -> Result<Self> {
        let registered = model.registered();
        if let Some(&q) = cfg.view_counts.iter().find(|q| !registered.contains(q)) {
            return Err(CoreError::UnregisteredSchedule(q));
        }
        Ok(Trainer {
            model,
            adam,
            rng,
            step,
            cfg,
        })
    }

    /// Resume from a checkpoint; the model must carry the checkpoint's
    /// architecture. Optimizer and RNG state are restored when present.
    pub fn resume(mut model: MvmsModel, ckpt: &Checkpoint, cfg: TrainConfig) -> Result<Self> {
        ckpt.check_config(model.config())?;
        for (dst, src) in model.params_mut().iter_mut().zip(&ckpt.params) {
            *dst = src.clone();
        }
        let adam = match &ckpt.optimizer {
            Some(a) => a.clone(),
            None => Adam::new(cfg.lr, model.params().iter().flat_map(|p| p.tensors())),
        };
        let rng = match ckpt.rng {
            Some(state) => {
                let mut r = ChaCha8Rng::from_seed(state.seed);
                r.set_word_pos(state.word_pos);
                r
            }
            None => ChaCha8Rng::seed_from_u64(cfg.seed),
        };
        Self::assemble(model, adam, rng, ckpt.train_step, cfg)
    }

    pub fn model(&self) -> &MvmsModel {
        &self.model
    }

    pub fn into_model(self) -> MvmsModel {
        self.model
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: *self.model.config(),
            gamma: self.cfg.loss.gamma,
            params: self.model.params().to_vec(),
            optimizer: Some(self.adam.clone()),
            rng: Some(RngState {
                seed: self.rng.get_seed(),
                word_pos: self.rng.get_word_pos(),
            }),
            train_step: self.step,
        }
    }

    /// Forward, loss, backward and one Adam update.
    fn optimize(
        &mut self,
        ctx: &StageContext,
        loss: impl FnOnce(&mut Tape, mvms_diffcore::Var) -> Result<LossTerms>,
    ) -> Result<StepLog> {
        let mut t = Tape::new();
        let bound = self.model.bind(&mut t, true);
        let outs = self.model.forward_tape(&mut t, &bound, ctx)?;
        let terms = loss(&mut t, *outs.last().expect("n_s >= 1"))?;
        let log = StepLog {
            step: self.step + 1,
            view_count: ctx.ops().q1(),
            loss: t.value(terms.total).item(),
            l1: t.value(terms.l1).item(),
            ssim_term: t.value(terms.ssim_term).item(),
        };
        if !log.loss.is_finite() {
            return Err(CoreError::NonFiniteLoss {
                step: log.step,
                view_count: log.view_count,
                value: log.loss,
            });
        }
        t.backward(terms.total)?;
        let grads: Vec<Tensor> = bound
            .all()
            .iter()
            .flat_map(|net| net.flat())
            .map(|&v| t.grad_or_zeros(v))
            .collect();
        let mut params: Vec<&mut Tensor> = self
            .model
            .params_mut()
            .iter_mut()
            .flat_map(|p| p.tensors_mut())
            .collect();
        self.adam.update(&mut params, &grads)?;
        self.step += 1;
        Ok(log)
    }

    /// One supervised step on a randomly drawn, randomly flipped sample.
    pub fn train_step<D: Dataset + ?Sized>(&mut self, data: &D) -> Result<StepLog> {
        if data.is_empty() {
            return Err(CoreError::EmptyDataset);
        }
        if self.cfg.view_counts.is_empty() {
            return Err(CoreError::Dims("empty view-count schedule".into()));
        }
        let idx = self.rng.random_range(0..data.len());
        let q1 = self.cfg.view_counts[self.rng.random_range(0..self.cfg.view_counts.len())];
        let mut flips = Flips::default();
        if self.cfg.flips {
            flips.horizontal = self.rng.random::<bool>();
            flips.vertical = self.rng.random::<bool>();
        }
        let ops = self.model.ops_for(q1)?;
        let (target, y) = data.sample(idx, flips, &ops)?;
        let ctx = StageContext::new(ops, &y)?;
        let target = image_to_tensor(target.view());
        let cfg = self.cfg.loss;
        self.optimize(&ctx, |t, x| {
            let tv = t.constant(target);
            total_loss(t, x, tv, &cfg)
        })
    }

    /// `steps` supervised steps, writing one log line per step if `log` is set.
    pub fn run<D: Dataset + ?Sized>(
        &mut self,
        data: &D,
        steps: u64,
        mut log: Option<&mut dyn Write>,
    ) -> Result<Vec<StepLog>> {
        let mut out = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let rec = self.train_step(data)?;
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", rec.line())?;
            }
            out.push(rec);
        }
        Ok(out)
    }

    /// One pass of the measurement-consistency loss over `contexts`, in order.
    /// Returns the mean loss of the pass.
    pub fn finetune_epoch(&mut self, contexts: &[StageContext]) -> Result<f64> {
        if contexts.is_empty() {
            return Err(CoreError::EmptyDataset);
        }
        let cfg = self.cfg.loss;
        let mut sum = 0.0;
        for ctx in contexts {
            let rec = self.optimize(ctx, |t, x| unsupervised_loss(t, x, ctx, &cfg))?;
            sum += rec.loss;
        }
        Ok(sum / contexts.len() as f64)
    }
}

/// Train `model` for `steps` steps; returns the trainer for checkpointing.
pub fn train_loop<D: Dataset + ?Sized>(
    model: MvmsModel,
    data: &D,
    cfg: TrainConfig,
    steps: u64,
    log: Option<&mut dyn Write>,
) -> Result<(Trainer, Vec<StepLog>)> {
    if data.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let mut trainer = Trainer::new(model, cfg)?;
    let logs = trainer.run(data, steps, log)?;
    Ok((trainer, logs))
}

/// Unsupervised fine-tuning for `epochs` passes; returns per-epoch mean loss.
pub fn finetune_unsupervised(
    model: MvmsModel,
    contexts: &[StageContext],
    epochs: usize,
    cfg: TrainConfig,
) -> Result<(MvmsModel, Vec<f64>)> {
    if contexts.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let mut trainer = Trainer::new(model, cfg)?;
    let losses = (0..epochs)
        .map(|_| trainer.finetune_epoch(contexts))
        .collect::<Result<Vec<_>>>()?;
    Ok((trainer.into_model(), losses))
}
