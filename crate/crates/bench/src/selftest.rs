//! Quick numerical self-checks: projector adjointness, end-to-end gradients
//! against finite differences, and the parameter-count table.

use std::sync::Arc;

use mvms_core::loss::{total_loss, LossConfig};
use mvms_core::ops::image_to_tensor;
use mvms_core::{param_count, ModelConfig, MvmsModel};
use mvms_diffcore::{Tape, Tensor};
use mvms_tomo::{Beam, GeometryConfig, ScanGeometry, Sinogram};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::phantom::{make_phantom, PhantomKind, PhantomSpec};

/// Outcome of one self-check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn line(&self) -> String {
        format!(
            "{}\t{}\t{}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

/// `param_count(32, n, 8)` for `n = 2..=6`.
pub const PARAM_TABLE: [(usize, usize); 5] = [
    (2, 130049),
    (3, 184513),
    (4, 238977),
    (5, 293441),
    (6, 347905),
];

pub fn param_count_check() -> Check {
    let bad: Vec<String> = PARAM_TABLE
        .iter()
        .filter(|&&(n, want)| param_count(32, n, 8) != want)
        .map(|&(n, want)| format!("n={n}: {} != {want}", param_count(32, n, 8)))
        .collect();
    Check {
        name: "param_count".into(),
        pass: bad.is_empty(),
        detail: if bad.is_empty() {
            format!("param_count(32,5,8)={}", param_count(32, 5, 8))
        } else {
            bad.join("; ")
        },
    }
}

/// Largest `|<Px, y> - <x, P^T y>| / (||Px|| ||y||)` over `pairs` random pairs.
pub fn adjoint_mismatch(geom: &ScanGeometry, pairs: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let views = geom.full_subset();
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let x = Array2::from_shape_fn(geom.grid(), |_| rng.random_range(-1.0..1.0));
        let y = Sinogram {
            data: Array2::from_shape_fn((views.len(), geom.n_det()), |_| {
                rng.random_range(-1.0..1.0)
            }),
            views: views.clone(),
        };
        let px = geom.forward_project(x.view(), &views)?;
        let bty = geom.back_project(&y)?;
        let lhs = (&px.data * &y.data).sum();
        let rhs = (&x * &bty).sum();
        let norm = px.data.mapv(|v| v * v).sum().sqrt() * y.data.mapv(|v| v * v).sum().sqrt();
        worst = worst.max((lhs - rhs).abs() / norm);
    }
    Ok(worst)
}

/// Small geometry used by the adjoint suite: 16 x 16 pixels, 12 views and
/// 24 detectors.
pub fn adjoint_geometry(beam: Beam) -> Result<ScanGeometry> {
    let cfg = GeometryConfig {
        beam,
        n_views: 12,
        n_det: 24,
        det_spacing: if beam == Beam::Fan { 2.4 } else { 1.0 },
        src_dist: 32.0,
        det_dist: 32.0,
        grid: (16, 16),
        pixel_size: 1.0,
    };
    Ok(cfg.build()?)
}

pub fn adjoint_check() -> Result<Check> {
    let fan = adjoint_mismatch(&adjoint_geometry(Beam::Fan)?, 8, 1)?;
    let par = adjoint_mismatch(&adjoint_geometry(Beam::Parallel)?, 8, 2)?;
    let worst = fan.max(par);
    Ok(Check {
        name: "adjoint".into(),
        pass: worst < 1e-10,
        detail: format!("fan {fan:.3e}, parallel {par:.3e}"),
    })
}

/// Setup of the end-to-end gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradSetup {
    pub p: usize,
    pub n: usize,
    pub n_s: usize,
    pub grid: usize,
    pub full_views: usize,
    pub views: usize,
    pub step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradSetup {
    fn default() -> Self {
        GradSetup {
            p: 4,
            n: 2,
            n_s: 1,
            grid: 8,
            full_views: 24,
            views: 6,
            step: 1e-5,
            floor: 1e-6,
            seed: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradReport {
    pub params: usize,
    pub max_rel: f64,
    pub max_abs: f64,
}

/// Entry `j` of the `k`-th parameter tensor in flat order.
fn param_entry(m: &mut MvmsModel, k: usize, j: usize) -> &mut f64 {
    let mut all: Vec<&mut Tensor> = m
        .params_mut()
        .iter_mut()
        .flat_map(|p| p.tensors_mut())
        .collect();
    &mut all.swap_remove(k).data_mut()[j]
}

/// Analytic gradient of the supervised loss with respect to every model
/// parameter against central differences.
pub fn model_gradient_check(s: &GradSetup) -> Result<GradReport> {
    let mut gc = GeometryConfig::toy_fan_60().with_grid(s.grid, s.grid);
    gc.n_views = s.full_views;
    let geom = Arc::new(gc.build()?);
    let cfg = ModelConfig {
        p: s.p,
        n: s.n,
        n_s: s.n_s,
        ..ModelConfig::default()
    };
    let mut model = MvmsModel::new(cfg, geom, s.seed)?;
    let target = make_phantom(&PhantomSpec::new(
        PhantomKind::RandomEllipses,
        (s.grid, s.grid),
        s.seed,
    ))?;
    let ops = model.ops_for(s.views)?;
    let y = ops.simulate(target.view())?;
    let ctx = model.context(&y)?;
    let target = image_to_tensor(target.view());
    let loss_cfg = LossConfig::default();

    let loss_of = |model: &MvmsModel| -> Result<f64> {
        let mut t = Tape::new();
        let bound = model.bind(&mut t, false);
        let out = model.forward_tape(&mut t, &bound, &ctx)?;
        let tv = t.constant(target.clone());
        let l = total_loss(&mut t, *out.last().expect("n_s >= 1"), tv, &loss_cfg)?;
        Ok(t.value(l.total).item())
    };

    let mut t = Tape::new();
    let bound = model.bind(&mut t, true);
    let out = model.forward_tape(&mut t, &bound, &ctx)?;
    let tv = t.constant(target.clone());
    let l = total_loss(&mut t, *out.last().expect("n_s >= 1"), tv, &loss_cfg)?;
    t.backward(l.total).map_err(mvms_core::CoreError::from)?;
    let analytic: Vec<Tensor> = bound
        .all()
        .iter()
        .flat_map(|net| net.flat())
        .map(|&v| t.grad_or_zeros(v))
        .collect();

    let mut report = GradReport {
        params: 0,
        max_rel: 0.0,
        max_abs: 0.0,
    };
    for (k, a) in analytic.iter().enumerate() {
        for j in 0..a.len() {
            let orig = *param_entry(&mut model, k, j);
            *param_entry(&mut model, k, j) = orig + s.step;
            let plus = loss_of(&model)?;
            *param_entry(&mut model, k, j) = orig - s.step;
            let minus = loss_of(&model)?;
            *param_entry(&mut model, k, j) = orig;
            let numeric = (plus - minus) / (2.0 * s.step);
            let diff = (a.data()[j] - numeric).abs();
            let scale = a.data()[j].abs().max(numeric.abs()).max(s.floor);
            report.max_abs = report.max_abs.max(diff);
            report.max_rel = report.max_rel.max(diff / scale);
            report.params += 1;
        }
    }
    Ok(report)
}

pub fn gradient_check() -> Result<Check> {
    let r = model_gradient_check(&GradSetup::default())?;
    Ok(Check {
        name: "gradient".into(),
        pass: r.max_rel < 1e-4,
        detail: format!(
            "{} parameters, max rel err {:.3e}, max abs err {:.3e}",
            r.params, r.max_rel, r.max_abs
        ),
    })
}

/// Every suite, in a fixed order.
pub fn run_all() -> Result<Vec<Check>> {
    Ok(vec![
        param_count_check(),
        adjoint_check()?,
        gradient_check()?,
    ])
}
