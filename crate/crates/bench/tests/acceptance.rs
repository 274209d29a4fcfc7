//! One PASS/FAIL line per acceptance criterion, with runtime against budget.
//!
//! The process fails only on unexpected failures; criteria listed in
//! `KNOWN_GAPS` are still evaluated and reported as they come out.

#[path = "../../core/tests/support/dense.rs"]
mod dense;

use std::sync::Arc;
use std::time::{Duration, Instant};

use mvms_bench::fista::FistaConfig;
use mvms_bench::metrics::{psnr, ssim, SsimParams};
use mvms_bench::phantom::{make_phantom, PhantomKind, PhantomSpec};
use mvms_bench::selftest::{adjoint_geometry, model_gradient_check, GradSetup, PARAM_TABLE};
use mvms_bench::toy::{
    eval_fbp, eval_fista, eval_model, train_variant, tune_lambda, ToyConfig, ToyData,
};
use mvms_core::loss::{ssim as graph_ssim, unsupervised_loss, LossConfig, SsimConfig};
use mvms_core::ops::{image_to_tensor, tensor_to_image};
use mvms_core::refine::assemble_image;
use mvms_core::train::{Dataset, Flips};
use mvms_core::{
    param_count, Channel, ChannelSet, ModelConfig, MvmsModel, PnpSignal, StageContext, Variant,
};
use mvms_diffcore::Tape;
use mvms_tomo::{Beam, GeometryConfig, Sinogram};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that are evaluated but not expected to pass at desk scale; the
/// reason is given in the README.
const KNOWN_GAPS: &[usize] = &[6];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Report {
    unexpected: Vec<usize>,
}

impl Report {
    fn run(
        &mut self,
        id: usize,
        name: &str,
        budget: Duration,
        f: impl FnOnce() -> Outcome,
    ) -> Duration {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let pass = o.pass && took <= budget;
        let note = if !pass && KNOWN_GAPS.contains(&id) {
            " [known gap]"
        } else {
            ""
        };
        println!(
            "{} {id:>2} {name}: {} ({:.1} s, budget {} s){note}",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
        if !pass && !KNOWN_GAPS.contains(&id) {
            self.unexpected.push(id);
        }
        took
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn param_counts() -> Outcome {
    let bad: Vec<_> = PARAM_TABLE
        .iter()
        .filter(|&&(n, want)| param_count(32, n, 8) != want)
        .collect();
    let geom = Arc::new(GeometryConfig::toy_fan_60().build().unwrap());
    let unshared = ModelConfig {
        unshared: true,
        ..ModelConfig::default()
    };
    let total = MvmsModel::new(unshared, geom, 0).unwrap().param_count();
    outcome(
        bad.is_empty() && total == 2_054_087,
        format!(
            "n=2..6 table {}, 7 unshared stages {total}",
            if bad.is_empty() { "exact" } else { "wrong" }
        ),
    )
}

fn adjoint() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for beam in [Beam::Fan, Beam::Parallel] {
        let g = adjoint_geometry(beam).unwrap();
        let full = g.full_subset();
        for _ in 0..10 {
            let x = Array2::from_shape_fn(g.grid(), |_| rng.random_range(-1.0..1.0));
            let y = Sinogram {
                data: Array2::from_shape_fn((g.n_views(), g.n_det()), |_| {
                    rng.random_range(-1.0..1.0)
                }),
                views: full.clone(),
            };
            let px = g.forward_project(x.view(), &full).unwrap();
            let bty = g.back_project(&y).unwrap();
            let lhs: f64 = px.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&bty).map(|(a, b)| a * b).sum();
            let norm = |v: &Array2<f64>| v.iter().map(|a| a * a).sum::<f64>().sqrt();
            worst = worst.max((lhs - rhs).abs() / (norm(&px.data) * norm(&y.data)));
        }
    }
    outcome(worst < 1e-10, format!("max relative mismatch {worst:.2e}"))
}

fn dense_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    for (_, geom, subset) in dense::cases() {
        let x = Array2::from_shape_fn(geom.grid(), |_| rng.random_range(0.0..1.0));
        let other = Array2::from_shape_fn(geom.grid(), |_| rng.random_range(0.0..1.0));
        let y = geom.forward_project(other.view(), &subset).unwrap();
        worst = worst.max(dense::max_deviation(&geom, &subset, &x, &y));
    }
    outcome(
        worst < 1e-8,
        format!("max abs diff {worst:.2e} over fan and parallel 8x8"),
    )
}

fn fbp_round_trip() -> Outcome {
    let g = GeometryConfig::parallel_720()
        .with_grid(256, 256)
        .build()
        .unwrap();
    let x = make_phantom(&PhantomSpec::new(PhantomKind::SheppLogan, (256, 256), 0)).unwrap();
    let y = g.forward_project(x.view(), &g.full_subset()).unwrap();
    let p = psnr(g.fbp(&y).unwrap().view(), x.view(), 1.0).unwrap();
    outcome(
        p >= 30.0,
        format!(
            "PSNR {p:.2} dB on {} views x {} detectors",
            g.n_views(),
            g.n_det()
        ),
    )
}

fn gradient() -> Outcome {
    let r = model_gradient_check(&GradSetup::default()).unwrap();
    outcome(
        r.max_rel < 1e-4,
        format!("{} parameters, max rel err {:.2e}", r.params, r.max_rel),
    )
}

/// Models and baselines shared by the toy criteria.
struct Toy {
    cfg: ToyConfig,
    data: ToyData,
    full: Option<MvmsModel>,
}

fn toy_uplift(toy: &mut Toy) -> Outcome {
    let (model, _) = train_variant(&toy.cfg, &toy.data, Variant::G, None).unwrap();
    let g = &toy.data.geom;
    let mut parts = Vec::new();
    let mut pass = true;
    for &q in &toy.cfg.view_counts {
        let m = eval_model(&model, q, &toy.data.test).unwrap().psnr;
        let f = eval_fbp(g, q, &toy.data.test).unwrap().psnr;
        pass &= m >= f + 3.0;
        parts.push(format!("{q} views: model {m:.2} fbp {f:.2}"));
    }
    let q = toy.cfg.view_counts[0];
    let (lambda, _) = tune_lambda(g, q, &toy.data.val, &toy.cfg.lambdas).unwrap();
    let tv = eval_fista(g, q, &toy.data.test, &FistaConfig::new(lambda))
        .unwrap()
        .psnr;
    let m = eval_model(&model, q, &toy.data.test).unwrap().psnr;
    pass &= m >= tv;
    parts.push(format!("fista-tv {tv:.2} (lambda {lambda}) at {q}"));
    toy.full = Some(model);
    outcome(pass, parts.join("; "))
}

fn mean_psnr(model: &MvmsModel, toy: &Toy) -> f64 {
    let v = &toy.cfg.view_counts;
    v.iter()
        .map(|&q| eval_model(model, q, &toy.data.test).unwrap().psnr)
        .sum::<f64>()
        / v.len() as f64
}

fn ablation(toy: &Toy) -> Outcome {
    let g = toy.full.as_ref().expect("full model trained");
    let (a, _) = train_variant(&toy.cfg, &toy.data, Variant::A, None).unwrap();
    let (pa, pg) = (mean_psnr(&a, toy), mean_psnr(g, toy));
    outcome(pg >= pa, format!("mean PSNR (g) {pg:.2} vs (a) {pa:.2}"))
}

fn blind_views(toy: &Toy) -> Outcome {
    let model = toy.full.as_ref().expect("full model trained");
    let m = eval_model(model, 20, &toy.data.test).unwrap().psnr;
    let f = eval_fbp(&toy.data.geom, 20, &toy.data.test).unwrap().psnr;
    outcome(m >= f, format!("20 views: model {m:.2} fbp {f:.2}"))
}

fn pnp(toy: &Toy) -> Outcome {
    let model = toy.full.as_ref().expect("full model trained");
    let q = 15;
    let ops = model.ops_for(q).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for k in 0..3 {
        let actual = toy.data.geom.perturb(0.01, 200 + k as u64).unwrap();
        let (target, _) = toy.data.test.sample(k, Flips::default(), &ops).unwrap();
        let y = actual.forward_project(target.view(), ops.subset()).unwrap();
        let ctx = StageContext::new(ops.clone(), &y).unwrap();
        let traj = model
            .run_pnp(&ctx, 20, |_, x| {
                let img = tensor_to_image(x).unwrap();
                PnpSignal::go(Some(psnr(img.view(), target.view(), 1.0).unwrap()))
            })
            .unwrap();
        let finite = traj
            .images
            .iter()
            .all(|t| t.data().iter().all(|v| v.is_finite()));
        let first = traj.metrics[0].unwrap();
        let last = traj.metrics[19].unwrap();
        pass &= finite && last >= first;
        parts.push(format!("{first:.2} -> {last:.2}"));
    }
    outcome(
        pass,
        format!("PSNR iteration 1 -> 20: {}", parts.join(", ")),
    )
}

fn ssim_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let graph = |x: &Array2<f64>, y: &Array2<f64>| {
        let mut t = Tape::new();
        let a = t.constant(image_to_tensor(x.view()));
        let b = t.constant(image_to_tensor(y.view()));
        let s = graph_ssim(&mut t, a, b, &SsimConfig::default()).unwrap();
        t.value(s).item()
    };
    let mut identity = true;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (h, w) = (rng.random_range(6..24), rng.random_range(6..24));
        let x = Array2::from_shape_fn((h, w), |_| rng.random::<f64>());
        let y = x.mapv(|v| (v + 0.3 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0));
        identity &= graph(&x, &x) == 1.0;
        let b = ssim(x.view(), y.view(), &SsimParams::default()).unwrap();
        worst = worst.max((graph(&x, &y) - b).abs());
    }
    outcome(
        identity && worst < 1e-10,
        format!("ssim(x,x)==1: {identity}, max oracle diff {worst:.2e}"),
    )
}

fn fixed_point() -> Outcome {
    let geom = Arc::new(GeometryConfig::toy_fan_60().build().unwrap());
    let ops = Arc::new(mvms_core::ViewOps::decimated(geom.clone(), 15).unwrap());
    let mut worst_es: f64 = 0.0;
    let mut worst_loss: f64 = 0.0;
    for seed in 0..3 {
        let x = make_phantom(&PhantomSpec::new(
            PhantomKind::RandomEllipses,
            geom.grid(),
            seed,
        ))
        .unwrap();
        let y = ops.simulate(x.view()).unwrap();
        let ctx = StageContext::new(ops.clone(), &y).unwrap();
        let set = ChannelSet::of(&[Channel::XPrev, Channel::Es]).unwrap();
        let stack = assemble_image(x.view(), &ctx, set).unwrap();
        let plane = geom.n_pixels();
        worst_es = stack.data()[plane..]
            .iter()
            .fold(worst_es, |m, v| m.max(v.abs()));
        let mut t = Tape::new();
        let xv = t.constant(image_to_tensor(x.view()));
        let l = unsupervised_loss(&mut t, xv, &ctx, &LossConfig::default()).unwrap();
        worst_loss = worst_loss.max(t.value(l.total).item().abs());
    }
    outcome(
        worst_es < 1e-12 && worst_loss < 1e-12,
        format!("max |e_s| {worst_es:.1e}, unsupervised loss {worst_loss:.1e}"),
    )
}

fn main() {
    let mut r = Report { unexpected: vec![] };
    r.run(1, "parameter counts", secs(1), param_counts);
    r.run(2, "projector adjoint", secs(1), adjoint);
    r.run(3, "dense-matrix oracle", secs(10), dense_oracle);
    r.run(4, "FBP round trip", secs(30), fbp_round_trip);
    r.run(5, "end-to-end gradient", secs(60), gradient);

    let cfg = ToyConfig::default();
    let data = ToyData::generate(&cfg).unwrap();
    let mut toy = Toy {
        cfg,
        data,
        full: None,
    };
    let t6 = r.run(6, "toy training uplift", secs(15 * 60), || {
        toy_uplift(&mut toy)
    });
    // the ablation budget covers the shared training as well
    r.run(7, "ablation (g) vs (a)", secs(30 * 60) - t6, || {
        ablation(&toy)
    });
    r.run(8, "untrained view count", secs(60), || blind_views(&toy));
    r.run(9, "PnP under geometry mismatch", secs(120), || pnp(&toy));

    r.run(10, "SSIM identity and oracle", secs(10), ssim_checks);
    r.run(11, "noiseless fixed point", secs(1), fixed_point);

    if !r.unexpected.is_empty() {
        eprintln!("unexpected failures: {:?}", r.unexpected);
        std::process::exit(1);
    }
}
