use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mvms_bench::fista::{fista_tv, FistaConfig};
use mvms_bench::manifest::{DatasetManifest, Split};
use mvms_bench::metrics::{HuScale, MetricsRecord};
use mvms_bench::phantom::{make_phantom, PhantomKind, PhantomSpec};
use mvms_bench::tgrd::{read_image, write_image};
use mvms_bench::toy::{parse_variant, run_ablation, AblationRow, ToyConfig, ToyData};
use mvms_bench::{selftest, BenchError};
use mvms_core::checkpoint::Checkpoint;
use mvms_core::loss::LossConfig;
use mvms_core::ops::tensor_to_image;
use mvms_core::train::{finetune_unsupervised, StepLog, TrainConfig, Trainer};
use mvms_core::{ModelConfig, MvmsModel, PnpSignal, StageContext, Variant};
use mvms_tomo::{GeometryConfig, ScanGeometry, Sinogram};
use ndarray::Array2;

#[derive(Parser)]
#[command(
    name = "mvms",
    about = "Sparse-view CT reconstruction toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct GeomArgs {
    /// Preset name or path to a geometry file.
    #[arg(long, default_value = "toy-fan-60")]
    geometry: String,
    /// Rescale the geometry to an N x N grid with the same field of view.
    #[arg(long)]
    grid: Option<usize>,
}

impl GeomArgs {
    fn config(&self) -> Result<GeometryConfig> {
        let mut cfg = match GeometryConfig::preset(&self.geometry) {
            Ok(c) => c,
            Err(_) if Path::new(&self.geometry).is_file() => {
                let text = std::fs::read_to_string(&self.geometry)?;
                GeometryConfig::parse(&text)?
            }
            Err(e) => {
                return Err(e).with_context(|| {
                    format!(
                        "not a preset ({}) or a readable file",
                        GeometryConfig::preset_names().join(", ")
                    )
                })
            }
        };
        if let Some(n) = self.grid {
            cfg = cfg.with_grid(n, n);
        }
        Ok(cfg)
    }

    fn build(&self) -> Result<Arc<ScanGeometry>> {
        Ok(Arc::new(self.config()?.build()?))
    }
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Number of unfolded stages.
    #[arg(long, default_value_t = 7)]
    stages: usize,
    /// Multigrid depth of the correction network.
    #[arg(long, default_value_t = 5)]
    depth: usize,
    /// Feature width of the correction network.
    #[arg(long, default_value_t = 32)]
    width: usize,
    /// Ablation variant a..g selecting the input channels.
    #[arg(long, default_value = "g")]
    variant: String,
    /// Separate parameters per stage.
    #[arg(long)]
    unshared: bool,
}

impl ModelArgs {
    fn config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            p: self.width,
            n: self.depth,
            n_s: self.stages,
            channels: parse_variant(&self.variant)?.channels(),
            unshared: self.unshared,
            ..ModelConfig::default()
        })
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic phantom.
    Phantom {
        #[arg(long, default_value = "shepp_logan")]
        kind: String,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project an image onto a sparse (or full) view set.
    Project {
        #[command(flatten)]
        geom: GeomArgs,
        /// Sparse view count; all views when omitted.
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filtered backprojection of a sinogram.
    Fbp {
        #[command(flatten)]
        geom: GeomArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Print metrics against this image.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// TV-regularised iterative baseline.
    Fista {
        #[command(flatten)]
        geom: GeomArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.03)]
        lambda: f64,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Supervised training on manifest images or synthetic phantoms.
    Train {
        #[command(flatten)]
        geom: GeomArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated training view counts.
        #[arg(long, value_delimiter = ',', default_value = "15,30")]
        views: Vec<usize>,
        /// Images from the train split; random ellipses when omitted.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        phantoms: usize,
        #[arg(long, default_value_t = 500)]
        steps: u64,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Continue from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Per-step tab-separated log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Checkpoint plus sinogram to image.
    Reconstruct {
        #[command(flatten)]
        geom: GeomArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Plug-and-play iterations of the trained stage.
    Pnp {
        #[command(flatten)]
        geom: GeomArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long)]
        out: PathBuf,
        /// Report PSNR per iteration against this image.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Unsupervised fine-tuning on measured sinograms.
    Finetune {
        #[command(flatten)]
        geom: GeomArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sinogram files.
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics table for image pairs.
    Eval {
        /// Reconstructions.
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        /// References, one per input.
        #[arg(long, num_args = 1.., required = true)]
        reference: Vec<PathBuf>,
        #[arg(long, default_value_t = 4095.0)]
        hu_slope: f64,
        #[arg(long, default_value_t = 1024.0 / 4095.0)]
        mu_water: f64,
    },
    /// Train and evaluate channel-ablation variants on toy data.
    Ablate {
        /// Variant letters, or "all".
        #[arg(long, value_delimiter = ',', default_value = "all")]
        variant: Vec<String>,
        #[arg(long, default_value_t = 500)]
        steps: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adjoint, gradient and parameter-count checks.
    Selftest,
}

fn read_sinogram(path: &Path, geom: &ScanGeometry) -> Result<Sinogram> {
    let data = read_image(path)?;
    if data.ncols() != geom.n_det() {
        bail!(
            "{}: {} detector columns, geometry has {}",
            path.display(),
            data.ncols(),
            geom.n_det()
        );
    }
    let views = geom.sparse_subset(data.nrows())?;
    Ok(Sinogram { data, views })
}

fn report(x: &Array2<f64>, reference: Option<&PathBuf>) -> Result<()> {
    if let Some(r) = reference {
        let r = read_image(r)?;
        let m = MetricsRecord::compute(x.view(), r.view(), &HuScale::default())?;
        println!("{}", MetricsRecord::HEADER);
        println!("{}", m.line());
    }
    Ok(())
}

fn load_model(path: &Path, geom: Arc<ScanGeometry>) -> Result<(MvmsModel, Checkpoint)> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let model = MvmsModel::with_params(ckpt.config, geom, ckpt.params.clone())?;
    Ok((model, ckpt))
}

fn write_table(rows: &[AblationRow], out: &mut dyn Write) -> Result<()> {
    writeln!(
        out,
        "variant\tchannels\tview_count\t{}",
        MetricsRecord::HEADER
    )?;
    for r in rows {
        for (q, m) in &r.per_view {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.variant.letter(),
                r.channels,
                q,
                m.line()
            )?;
        }
    }
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Phantom {
            kind,
            size,
            seed,
            out,
        } => {
            let kind: PhantomKind = kind.parse()?;
            let img = make_phantom(&PhantomSpec::new(kind, (size, size), seed))?;
            write_image(&out, &img)?;
        }
        Cmd::Project {
            geom,
            views,
            input,
            out,
        } => {
            let g = geom.build()?;
            let x = read_image(&input)?;
            let subset = match views {
                Some(q) => g.sparse_subset(q)?,
                None => g.full_subset(),
            };
            let y = g.forward_project(x.view(), &subset)?;
            write_image(&out, &y.data)?;
        }
        Cmd::Fbp {
            geom,
            input,
            out,
            reference,
        } => {
            let g = geom.build()?;
            let x = g.fbp(&read_sinogram(&input, &g)?)?;
            write_image(&out, &x)?;
            report(&x, reference.as_ref())?;
        }
        Cmd::Fista {
            geom,
            input,
            out,
            lambda,
            iters,
            reference,
        } => {
            let g = geom.build()?;
            let y = read_sinogram(&input, &g)?;
            let mut cfg = FistaConfig::new(lambda);
            cfg.max_iter = iters;
            let r = fista_tv(&g, &y, &cfg)?;
            write_image(&out, &r.image)?;
            report(&r.image, reference.as_ref())?;
        }
        Cmd::Train {
            geom,
            model,
            views,
            manifest,
            phantoms,
            steps,
            lr,
            gamma,
            seed,
            checkpoint,
            log,
            out,
        } => {
            let g = geom.build()?;
            let data = match manifest {
                Some(m) => DatasetManifest::load(&m)?.images(Split::Train)?,
                None => mvms_bench::phantom::ellipse_set(g.grid(), seed, phantoms)?,
            };
            let tc = TrainConfig {
                view_counts: views.clone(),
                lr,
                loss: LossConfig {
                    gamma,
                    ..LossConfig::default()
                },
                seed,
                flips: true,
            };
            let mut trainer = match checkpoint {
                Some(p) => {
                    let (mut m, ckpt) = load_model(&p, g)?;
                    m.register_view_counts(&views)?;
                    Trainer::resume(m, &ckpt, tc)?
                }
                None => {
                    let mut m = MvmsModel::new(model.config()?, g, seed)?;
                    m.register_view_counts(&views)?;
                    Trainer::new(m, tc)?
                }
            };
            let mut sink = match &log {
                Some(p) => {
                    let mut w = BufWriter::new(File::create(p)?);
                    writeln!(w, "{}", StepLog::HEADER)?;
                    Some(w)
                }
                None => None,
            };
            let logs = trainer.run(
                data.as_slice(),
                steps,
                sink.as_mut().map(|w| w as &mut dyn Write),
            )?;
            if let Some(w) = sink.as_mut() {
                w.flush()?;
            }
            trainer.checkpoint().save(&out)?;
            if let Some(last) = logs.last() {
                println!("{}", StepLog::HEADER);
                println!("{}", last.line());
            }
        }
        Cmd::Reconstruct {
            geom,
            checkpoint,
            input,
            out,
            reference,
        } => {
            let g = geom.build()?;
            let (model, _) = load_model(&checkpoint, g.clone())?;
            let x = tensor_to_image(&model.forward(&read_sinogram(&input, &g)?)?)?;
            write_image(&out, &x)?;
            report(&x, reference.as_ref())?;
        }
        Cmd::Pnp {
            geom,
            checkpoint,
            input,
            iters,
            out,
            reference,
        } => {
            let g = geom.build()?;
            let (model, _) = load_model(&checkpoint, g.clone())?;
            let ctx = model.context(&read_sinogram(&input, &g)?)?;
            let r = reference.map(|p| read_image(&p)).transpose()?;
            let traj = model.run_pnp(&ctx, iters, |_, x| {
                let metric = r.as_ref().and_then(|r| {
                    let x = tensor_to_image(x).ok()?;
                    mvms_bench::metrics::psnr(x.view(), r.view(), 1.0).ok()
                });
                PnpSignal::go(metric)
            })?;
            if r.is_some() {
                println!("iteration\tpsnr_db");
                for (k, m) in traj.metrics.iter().enumerate() {
                    println!("{}\t{:.4}", k + 1, m.unwrap_or(f64::NAN));
                }
            }
            let last = traj.images.last().context("no iterations ran")?;
            write_image(&out, &tensor_to_image(last)?)?;
        }
        Cmd::Finetune {
            geom,
            checkpoint,
            input,
            epochs,
            lr,
            gamma,
            seed,
            out,
        } => {
            let g = geom.build()?;
            let (mut model, ckpt) = load_model(&checkpoint, g.clone())?;
            let sinos = input
                .iter()
                .map(|p| read_sinogram(p, &g))
                .collect::<Result<Vec<_>>>()?;
            let mut counts: Vec<usize> = sinos.iter().map(|s| s.n_views()).collect();
            counts.sort_unstable();
            counts.dedup();
            model.register_view_counts(&counts)?;
            let contexts = sinos
                .iter()
                .map(|s| model.context(s))
                .collect::<mvms_core::Result<Vec<StageContext>>>()?;
            let tc = TrainConfig {
                view_counts: counts,
                lr,
                loss: LossConfig {
                    gamma: gamma.unwrap_or(ckpt.gamma),
                    ..LossConfig::default()
                },
                seed,
                flips: false,
            };
            let (model, losses) = finetune_unsupervised(model, &contexts, epochs, tc)?;
            println!("epoch\tloss");
            for (e, l) in losses.iter().enumerate() {
                println!("{}\t{:.10e}", e + 1, l);
            }
            Checkpoint {
                config: *model.config(),
                gamma: gamma.unwrap_or(ckpt.gamma),
                params: model.params().to_vec(),
                optimizer: None,
                rng: None,
                train_step: ckpt.train_step,
            }
            .save(&out)?;
        }
        Cmd::Eval {
            input,
            reference,
            hu_slope,
            mu_water,
        } => {
            if input.len() != reference.len() {
                bail!("{} inputs but {} references", input.len(), reference.len());
            }
            let hu = HuScale {
                mu_water,
                slope: hu_slope,
            };
            println!("image\t{}", MetricsRecord::HEADER);
            for (x, r) in input.iter().zip(&reference) {
                let m = MetricsRecord::compute(read_image(x)?.view(), read_image(r)?.view(), &hu)?;
                println!("{}\t{}", x.display(), m.line());
            }
        }
        Cmd::Ablate {
            variant,
            steps,
            seed,
            out,
        } => {
            let variants: Vec<Variant> = if variant.iter().any(|v| v == "all") {
                Variant::ALL.to_vec()
            } else {
                variant
                    .iter()
                    .map(|v| parse_variant(v))
                    .collect::<std::result::Result<_, BenchError>>()?
            };
            let cfg = ToyConfig {
                steps,
                seed,
                ..ToyConfig::default()
            };
            let data = ToyData::generate(&cfg)?;
            let rows = variants
                .into_iter()
                .map(|v| run_ablation(&cfg, &data, v))
                .collect::<std::result::Result<Vec<_>, BenchError>>()?;
            write_table(&rows, &mut std::io::stdout())?;
            if let Some(p) = out {
                write_table(&rows, &mut BufWriter::new(File::create(p)?))?;
            }
        }
        Cmd::Selftest => {
            let checks = selftest::run_all()?;
            for c in &checks {
                println!("{}", c.line());
            }
            if checks.iter().any(|c| !c.pass) {
                bail!("self-test failed");
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
