//! Desk-scale experiments on random-ellipse phantoms: data splits,
//! baselines, training and evaluation of the unfolded model, and the channel
//! ablation.

use std::sync::Arc;

use mvms_core::loss::LossConfig;
use mvms_core::ops::tensor_to_image;
use mvms_core::train::{train_loop, Dataset, Flips, StepLog, TrainConfig};
use mvms_core::{ModelConfig, MvmsModel, Variant, ViewOps};
use mvms_tomo::{GeometryConfig, ScanGeometry, Sinogram};
use ndarray::{s, Array2};
use rayon::prelude::*;

use crate::error::{BenchError, Result};
use crate::fista::{fista_tv, FistaConfig};
use crate::metrics::{HuScale, MetricsRecord};
use crate::phantom::ellipse_set;

type CoreResult<T> = mvms_core::Result<T>;

/// Everything that defines one toy experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub geometry: GeometryConfig,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Training schedule of sparse view counts.
    pub view_counts: Vec<usize>,
    pub p: usize,
    pub n: usize,
    pub n_s: usize,
    pub steps: u64,
    pub lr: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Candidate TV weights searched on the validation split.
    pub lambdas: Vec<f64>,
    /// Measurements are simulated on a grid this many times finer than the
    /// reconstruction grid; 1 uses the reconstruction projector itself.
    pub oversample: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            geometry: GeometryConfig::toy_fan_60(),
            n_train: 64,
            n_val: 4,
            n_test: 8,
            view_counts: vec![15, 30],
            p: 8,
            n: 2,
            n_s: 3,
            steps: 500,
            lr: 1e-2,
            gamma: 1.0,
            seed: 7,
            lambdas: vec![0.003, 0.01, 0.03, 0.1, 0.3],
            oversample: 2,
        }
    }
}

/// Phantoms on the reconstruction grid together with the finer images and
/// projector their measurements are simulated from.
#[derive(Clone, Debug)]
pub struct PhantomSet {
    pub targets: Vec<Array2<f64>>,
    fine: Vec<Array2<f64>>,
    fine_geom: Option<Arc<ScanGeometry>>,
}

impl PhantomSet {
    /// `count` random-ellipse phantoms with seeds from `seed`. `fine_geom`
    /// must cover the same field of view on an integer multiple grid.
    pub fn generate(
        grid: (usize, usize),
        fine_geom: Option<Arc<ScanGeometry>>,
        seed: u64,
        count: usize,
    ) -> Result<Self> {
        let Some(fg) = fine_geom else {
            return Ok(PhantomSet {
                targets: ellipse_set(grid, seed, count)?,
                fine: vec![],
                fine_geom: None,
            });
        };
        let fine = ellipse_set(fg.grid(), seed, count)?;
        let f = fg.grid().0 / grid.0;
        let targets = fine.iter().map(|x| block_mean(x, f)).collect();
        Ok(PhantomSet {
            targets,
            fine,
            fine_geom: Some(fg),
        })
    }
}

/// Average over non-overlapping `f x f` blocks.
pub fn block_mean(x: &Array2<f64>, f: usize) -> Array2<f64> {
    let (m1, m2) = x.dim();
    let inv = 1.0 / (f * f) as f64;
    Array2::from_shape_fn((m1 / f, m2 / f), |(i, j)| {
        x.slice(s![i * f..(i + 1) * f, j * f..(j + 1) * f]).sum() * inv
    })
}

impl Dataset for PhantomSet {
    fn len(&self) -> usize {
        self.targets.len()
    }

    fn sample(
        &self,
        idx: usize,
        flips: Flips,
        ops: &ViewOps,
    ) -> CoreResult<(Array2<f64>, Sinogram)> {
        let target = flips.apply(self.targets[idx].view());
        let y = match &self.fine_geom {
            None => ops.simulate(target.view())?,
            Some(fg) => {
                let x = flips.apply(self.fine[idx].view());
                fg.forward_project(x.view(), ops.subset())?
            }
        };
        Ok((target, y))
    }
}

/// Disjoint phantom splits drawn from non-overlapping seed ranges.
#[derive(Clone, Debug)]
pub struct ToyData {
    pub geom: Arc<ScanGeometry>,
    pub train: PhantomSet,
    pub val: PhantomSet,
    pub test: PhantomSet,
}

impl ToyData {
    pub fn generate(cfg: &ToyConfig) -> Result<Self> {
        let geom = Arc::new(cfg.geometry.build()?);
        let grid = geom.grid();
        let fine = if cfg.oversample > 1 {
            let mut fc = cfg.geometry.clone();
            fc.grid = (grid.0 * cfg.oversample, grid.1 * cfg.oversample);
            fc.pixel_size /= cfg.oversample as f64;
            Some(Arc::new(fc.build()?))
        } else {
            None
        };
        let base = cfg.seed.wrapping_mul(1_000_003);
        let set = |offset: usize, count: usize| {
            PhantomSet::generate(grid, fine.clone(), base + offset as u64, count)
        };
        Ok(ToyData {
            train: set(0, cfg.n_train)?,
            val: set(cfg.n_train, cfg.n_val)?,
            test: set(cfg.n_train + cfg.n_val, cfg.n_test)?,
            geom,
        })
    }
}

fn mean_metrics(records: Vec<MetricsRecord>) -> Result<MetricsRecord> {
    MetricsRecord::mean(&records).ok_or(BenchError::Core(mvms_core::CoreError::EmptyDataset))
}

/// Mean metrics of `recon` over every sample of `set` measured at `q1` views.
pub fn evaluate<D, F>(
    geom: &Arc<ScanGeometry>,
    q1: usize,
    set: &D,
    recon: F,
) -> Result<MetricsRecord>
where
    D: Dataset + Sync + ?Sized,
    F: Fn(&Arc<ViewOps>, &Sinogram) -> Result<Array2<f64>> + Sync,
{
    let ops = Arc::new(ViewOps::decimated(geom.clone(), q1)?);
    let recs = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let (target, y) = set.sample(i, Flips::default(), &ops)?;
            let x = recon(&ops, &y)?;
            MetricsRecord::compute(x.view(), target.view(), &HuScale::default())
        })
        .collect::<Result<Vec<_>>>()?;
    mean_metrics(recs)
}

/// Sparse-view FBP.
pub fn eval_fbp<D: Dataset + Sync + ?Sized>(
    geom: &Arc<ScanGeometry>,
    q1: usize,
    set: &D,
) -> Result<MetricsRecord> {
    evaluate(geom, q1, set, |_, y| Ok(geom.fbp(y)?))
}

pub fn eval_fista<D: Dataset + Sync + ?Sized>(
    geom: &Arc<ScanGeometry>,
    q1: usize,
    set: &D,
    cfg: &FistaConfig,
) -> Result<MetricsRecord> {
    evaluate(geom, q1, set, |_, y| Ok(fista_tv(geom, y, cfg)?.image))
}

/// TV weight from `lambdas` with the best mean validation PSNR.
pub fn tune_lambda<D: Dataset + Sync + ?Sized>(
    geom: &Arc<ScanGeometry>,
    q1: usize,
    val: &D,
    lambdas: &[f64],
) -> Result<(f64, MetricsRecord)> {
    let mut best: Option<(f64, MetricsRecord)> = None;
    for &lambda in lambdas {
        let rec = eval_fista(geom, q1, val, &FistaConfig::new(lambda))?;
        if best.as_ref().is_none_or(|(_, b)| rec.psnr > b.psnr) {
            best = Some((lambda, rec));
        }
    }
    best.ok_or(BenchError::Lambda(f64::NAN))
}

pub fn eval_model<D: Dataset + Sync + ?Sized>(
    model: &MvmsModel,
    q1: usize,
    set: &D,
) -> Result<MetricsRecord> {
    evaluate(model.geometry(), q1, set, |_, y| {
        Ok(tensor_to_image(&model.forward(y)?)?)
    })
}

pub fn model_config(cfg: &ToyConfig, variant: Variant) -> ModelConfig {
    ModelConfig {
        p: cfg.p,
        n: cfg.n,
        n_s: cfg.n_s,
        channels: variant.channels(),
        ..ModelConfig::default()
    }
}

/// Train a fresh model of `variant` on the training split.
pub fn train_variant(
    cfg: &ToyConfig,
    data: &ToyData,
    variant: Variant,
    log: Option<&mut dyn std::io::Write>,
) -> Result<(MvmsModel, Vec<StepLog>)> {
    let mut model = MvmsModel::new(model_config(cfg, variant), data.geom.clone(), cfg.seed)?;
    model.register_view_counts(&cfg.view_counts)?;
    let tc = TrainConfig {
        view_counts: cfg.view_counts.clone(),
        lr: cfg.lr,
        loss: LossConfig {
            gamma: cfg.gamma,
            ..LossConfig::default()
        },
        seed: cfg.seed,
        flips: true,
    };
    let (trainer, logs) = train_loop(model, &data.train, tc, cfg.steps, log)?;
    Ok((trainer.into_model(), logs))
}

/// Test-split metrics of one ablation variant at each schedule view count.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: Variant,
    pub channels: usize,
    pub per_view: Vec<(usize, MetricsRecord)>,
}

impl AblationRow {
    pub fn mean_psnr(&self) -> f64 {
        self.per_view.iter().map(|(_, m)| m.psnr).sum::<f64>() / self.per_view.len() as f64
    }
}

pub fn run_ablation(cfg: &ToyConfig, data: &ToyData, variant: Variant) -> Result<AblationRow> {
    let (model, _) = train_variant(cfg, data, variant, None)?;
    let per_view = cfg
        .view_counts
        .iter()
        .map(|&q| Ok((q, eval_model(&model, q, &data.test)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationRow {
        variant,
        channels: variant.channels().len(),
        per_view,
    })
}

/// Variant by its letter `a`..`g`.
pub fn parse_variant(s: &str) -> Result<Variant> {
    Variant::parse(s).ok_or_else(|| BenchError::Variant(s.to_string()))
}
