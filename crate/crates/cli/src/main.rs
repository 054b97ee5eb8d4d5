//! `ldct` — scan simulation, low-dose noise, reconstruction, structure
//! checks, dataset generation, training and evaluation.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use ldct_core::conjugate::{conjugate_sinogram, ConjugateMap};
use ldct_core::dataset::{eval_dirs, gen_dataset, load_dataset, DatasetSpec};
use ldct_core::io;
use ldct_core::noise::{insert_low_dose_noise, DoseConfig};
use ldct_core::phantom::{analytic_sinogram, make_phantom, rasterize, Complexity};
use ldct_core::structure::{conjugate_loss, curvature_loss};
use ldct_core::{fbp, forward_project, FanGeometry, FilterKind, ScanMode};

#[derive(Parser)]
#[command(name = "ldct", version, about)]
struct Cli {
    /// Seed for anything stochastic in the subcommand.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output path (file or directory, depending on the subcommand).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ComplexityArg {
    Small,
    Medium,
}

impl From<ComplexityArg> for Complexity {
    fn from(v: ComplexityArg) -> Self {
        match v {
            ComplexityArg::Small => Complexity::Small,
            ComplexityArg::Medium => Complexity::Medium,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fan,
    Parallel,
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterArg {
    Ramp,
    Hann,
}

impl From<FilterArg> for FilterKind {
    fn from(v: FilterArg) -> Self {
        match v {
            FilterArg::Ramp => FilterKind::Ramp,
            FilterArg::Hann => FilterKind::HannRamp,
        }
    }
}

#[derive(clap::Args)]
struct GeometryArgs {
    #[arg(long, default_value_t = 360)]
    views: usize,
    #[arg(long, default_value_t = 129)]
    detectors: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Parallel)]
    mode: ModeArg,
    /// Detector spacing; defaults to 2/(D-1) in parallel mode and pi/P
    /// (an exact conjugate grid) in fan mode.
    #[arg(long)]
    spacing: Option<f64>,
    /// Source radius (fan mode).
    #[arg(long, default_value_t = 2.0)]
    radius: f64,
}

impl GeometryArgs {
    fn build(&self) -> anyhow::Result<FanGeometry> {
        let geom = match self.mode {
            ModeArg::Parallel => match self.spacing {
                None => FanGeometry::parallel(self.views, self.detectors)?,
                Some(s) => FanGeometry::new(self.views, self.detectors, s, 0.0, ScanMode::Parallel)?,
            },
            ModeArg::Fan => {
                let spacing = self
                    .spacing
                    .unwrap_or(std::f64::consts::PI / self.views as f64);
                FanGeometry::new(self.views, self.detectors, spacing, self.radius, ScanMode::Fan)?
            }
        };
        Ok(geom)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize a seeded ellipse phantom (seed 0 is the fixed preset).
    Phantom {
        #[arg(long, value_enum, default_value_t = ComplexityArg::Medium)]
        complexity: ComplexityArg,
        #[arg(long, default_value_t = 128)]
        width: usize,
    },
    /// Forward-project an image file, or a phantom given by seed.
    Project {
        /// Image to project (IMG1). Omit to project the seeded phantom.
        #[arg(long)]
        img: Option<PathBuf>,
        /// With a phantom: use exact analytic line integrals instead of
        /// projecting the raster.
        #[arg(long, default_value_t = false)]
        analytic: bool,
        /// Raster width used when projecting a phantom numerically.
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, value_enum, default_value_t = ComplexityArg::Medium)]
        complexity: ComplexityArg,
        #[command(flatten)]
        geometry: GeometryArgs,
    },
    /// Insert low-dose noise into a log-domain sinogram.
    Simulate {
        #[arg(long)]
        sino: PathBuf,
        /// Dose fraction in (0, 1].
        #[arg(long)]
        dose: f64,
        #[arg(long, default_value_t = 1e5)]
        photons: f64,
        #[arg(long, default_value_t = 10.0)]
        electronic_noise: f64,
    },
    /// Filtered back-projection of a sinogram.
    Recon {
        #[arg(long)]
        sino: PathBuf,
        #[arg(long, value_enum, default_value_t = FilterArg::Ramp)]
        filter: FilterArg,
        #[arg(long, default_value_t = 128)]
        width: usize,
    },
    /// Structure report: conjugate loss, curvature loss vs an optional
    /// reference, grid exactness and per-view residual quantiles (CSV).
    CheckStructure {
        #[arg(long)]
        sino: PathBuf,
        /// Clean reference sinogram for the curvature loss.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
    },
    /// Generate a dataset of (s_ld, s_nd, i_ld, i_nd) quadruples.
    GenDataset {
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        dose: f64,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, value_enum, default_value_t = ComplexityArg::Medium)]
        complexity: ComplexityArg,
        #[command(flatten)]
        geometry: GeometryArgs,
    },
    /// Train the denoising model from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Apply a trained model to a sinogram/image pair.
    Denoise {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        sino: PathBuf,
        #[arg(long)]
        img: PathBuf,
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Compare two directories of IMG1/SGM1 files (per-sample metrics CSV).
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
}

/// Write to stdout, ignoring a closed pipe (e.g. `ldct ... | head`).
fn print_pipe_safe(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("initializing the thread pool")?;
    }
    let out_or = |default: &str| -> PathBuf {
        cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
    };

    match &cli.command {
        Command::Phantom { complexity, width } => {
            let phantom = make_phantom(cli.seed, (*complexity).into());
            let img = rasterize(&phantom, *width)?;
            let path = out_or("phantom.img1");
            io::write_image(&path, &img)?;
            println!(
                "phantom seed {} with {} ellipses -> {}",
                cli.seed,
                phantom.ellipses.len(),
                path.display()
            );
        }
        Command::Project {
            img,
            analytic,
            width,
            complexity,
            geometry,
        } => {
            let geom = geometry.build()?;
            let sino = match img {
                Some(path) => {
                    if *analytic {
                        bail!("--analytic applies to phantoms, not image files");
                    }
                    forward_project(&io::read_image(path)?, &geom)?
                }
                None => {
                    let phantom = make_phantom(cli.seed, (*complexity).into());
                    if *analytic {
                        analytic_sinogram(&phantom, &geom)?
                    } else {
                        forward_project(&rasterize(&phantom, *width)?, &geom)?
                    }
                }
            };
            let path = out_or("projected.sgm1");
            io::write_sinogram(&path, &sino)?;
            println!(
                "sinogram {}x{} -> {}",
                sino.num_views(),
                sino.num_detectors(),
                path.display()
            );
        }
        Command::Simulate {
            sino,
            dose,
            photons,
            electronic_noise,
        } => {
            let input = io::read_sinogram(sino)?;
            let cfg = DoseConfig {
                dose_fraction: *dose,
                incident_photons: *photons,
                electronic_noise: *electronic_noise,
                seed: cli.seed,
            };
            let noisy = insert_low_dose_noise(&input, &cfg)?;
            let path = out_or("lowdose.sgm1");
            io::write_sinogram(&path, &noisy)?;
            println!("dose {dose} seed {} -> {}", cli.seed, path.display());
        }
        Command::Recon {
            sino,
            filter,
            width,
        } => {
            let input = io::read_sinogram(sino)?;
            let img = fbp(&input, (*filter).into(), *width)?;
            let path = out_or("recon.img1");
            io::write_image(&path, &img)?;
            println!("reconstruction {width}x{width} -> {}", path.display());
        }
        Command::CheckStructure { sino, reference } => {
            let s = io::read_sinogram(sino)?;
            let map = ConjugateMap::new(&s.geometry)?;
            let (lc, _) = conjugate_loss(&s)?;
            let mut csv = String::from("key,value\n");
            csv.push_str(&format!("l_c,{lc:.12e}\n"));
            if let Some(ref_path) = reference {
                let r = io::read_sinogram(ref_path)?;
                let (ls, _) = curvature_loss(&s, &r)?;
                csv.push_str(&format!("l_s,{ls:.12e}\n"));
                csv.push_str(&format!("sisl,{:.12e}\n", lc + ls));
            }
            csv.push_str(&format!("exact_grid,{}\n", map.exact));
            csv.push_str("view,q0,q25,q50,q75,q100\n");
            let gathered = conjugate_sinogram(&s)?;
            let d = s.num_detectors();
            for view in 0..s.num_views() {
                let mut residuals: Vec<f64> = (0..d)
                    .map(|c| (s.at(view, c) - gathered.at(view, c)).abs())
                    .collect();
                residuals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let q = |fr: f64| residuals[((residuals.len() - 1) as f64 * fr).round() as usize];
                csv.push_str(&format!(
                    "{view},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}\n",
                    q(0.0),
                    q(0.25),
                    q(0.5),
                    q(0.75),
                    q(1.0)
                ));
            }
            match &cli.out {
                Some(path) => std::fs::write(path, &csv)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print_pipe_safe(&csv),
            }
        }
        Command::GenDataset {
            count,
            dose,
            width,
            complexity,
            geometry,
        } => {
            let spec = DatasetSpec {
                count: *count,
                geometry: geometry.build()?,
                width: *width,
                dose: DoseConfig {
                    dose_fraction: *dose,
                    ..DoseConfig::new(*dose, cli.seed)
                },
                seed: cli.seed,
                complexity: (*complexity).into(),
            };
            let dir = out_or("dataset");
            gen_dataset(&dir, &spec)?;
            println!("{count} samples at dose {dose} -> {}", dir.display());
        }
        Command::Train { config } => {
            let (mut train_cfg, model_cfg) = ldct_model::config::parse_config_file(config)?;
            if cli.seed != 0 {
                train_cfg.seed = cli.seed;
            }
            if let Some(out) = &cli.out {
                train_cfg.out_dir = out.clone();
            }
            if train_cfg.out_dir.as_os_str().is_empty() {
                bail!("config must set out_dir (or pass --out)");
            }
            std::fs::create_dir_all(&train_cfg.out_dir)
                .with_context(|| format!("creating {}", train_cfg.out_dir.display()))?;
            let train_samples = load_dataset(&train_cfg.train_dir)?;
            let val_samples = match &train_cfg.val_dir {
                Some(dir) => load_dataset(dir)?,
                None => Vec::new(),
            };
            anyhow::ensure!(!train_samples.is_empty(), "training dataset is empty");
            let geometry = train_samples[0].s_nd.geometry.clone();
            let model = ldct_model::DenoiseModel::new(model_cfg)?;
            let out = ldct_model::train::train::<f32>(
                &model,
                &geometry,
                &train_samples,
                &val_samples,
                &train_cfg,
            )?;
            let log_path = train_cfg.out_dir.join("metrics.csv");
            std::fs::write(&log_path, &out.log)
                .with_context(|| format!("writing {}", log_path.display()))?;
            let ckpt_path = train_cfg.out_dir.join("model.ckpt");
            ldct_model::train::save_checkpoint(
                &ckpt_path,
                &model,
                &out.params,
                train_cfg.save_optimizer.then_some(&out.adam),
            )?;
            println!(
                "trained {} epochs: loss {:.4e} -> {:.4e}; wrote {} and {}",
                train_cfg.epochs,
                out.initial_loss,
                out.final_loss,
                log_path.display(),
                ckpt_path.display()
            );
        }
        Command::Denoise {
            model,
            sino,
            img,
            out_prefix,
        } => {
            let (net, params, _) = ldct_model::train::load_checkpoint::<f32>(model)?;
            let s_ld = io::read_sinogram(sino)?;
            let i_ld = io::read_image(img)?;
            let (s_hat, i_hat, i_noise) =
                ldct_model::train::denoise_pair(&net, &params, &s_ld, &i_ld)?;
            let prefix = out_prefix.display();
            let sino_path = PathBuf::from(format!("{prefix}_sino.sgm1"));
            let img_path = PathBuf::from(format!("{prefix}_img.img1"));
            let noise_path = PathBuf::from(format!("{prefix}_noise.img1"));
            io::write_sinogram(&sino_path, &s_hat)?;
            io::write_image(&img_path, &i_hat)?;
            io::write_image(&noise_path, &i_noise)?;
            println!(
                "wrote {}, {}, {}",
                sino_path.display(),
                img_path.display(),
                noise_path.display()
            );
        }
        Command::Eval { pred, reference } => {
            let (report, missing) = eval_dirs(pred, reference)?;
            let csv = report.to_csv();
            match &cli.out {
                Some(path) => std::fs::write(path, &csv)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print_pipe_safe(&csv),
            }
            if !missing.is_empty() {
                for name in &missing {
                    eprintln!("missing prediction for {name}");
                }
                bail!("{} reference file(s) had no prediction", missing.len());
            }
        }
    }
    Ok(())
}
