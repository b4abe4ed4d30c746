use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use augmentor::demo::{write_fixtures, DemoOptions};
use augmentor::geometry::GroundExtent;
use augmentor::pipeline::{
    augment_dataset, birdseye::DEFAULT_EXTENT, compute_stats, export_birdseye, load_config_file, load_rigs,
    render_debug, AugmentationConfig,
};

#[derive(Parser)]
#[command(
    name = "augmentor",
    version,
    about = "Augment calibrated street images with rendered cars"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to AUGMENTOR_THREADS, then all cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate composites, annotations and a manifest.
    Augment {
        #[command(flatten)]
        common: Common,
        /// Rig list JSON.
        #[arg(long)]
        rigs: PathBuf,
    },
    /// Export birdseye images and metadata for the trajectory annotator.
    Birdseye {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rigs: PathBuf,
        /// Only this rig id.
        #[arg(long)]
        rig: Option<String>,
        #[arg(long, default_value_t = 0.1)]
        meters_per_pixel: f64,
        /// x_min,x_max,z_min,z_max in meters.
        #[arg(long, value_delimiter = ',', num_args = 4)]
        extent: Option<Vec<f64>>,
    },
    /// Summarize a generated dataset.
    Stats {
        /// Manifest file or dataset directory.
        manifest: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Render one composite and dump all layer buffers.
    RenderDebug {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rigs: PathBuf,
        #[arg(long, default_value_t = 0)]
        rig_index: usize,
        #[arg(long, default_value_t = 0)]
        augmentation: u32,
    },
    /// Write a procedural demo dataset (rigs, images, panoramas, lanes).
    Demo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        rigs: usize,
        #[arg(long, default_value_t = 512)]
        width: u32,
        #[arg(long, default_value_t = 256)]
        height: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn worker_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("AUGMENTOR_THREADS") {
        Ok(v) => Ok(Some(
            v.trim().parse().with_context(|| format!("AUGMENTOR_THREADS={v}"))?,
        )),
        Err(_) => Ok(None),
    }
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_count(jobs)? {
        if n == 0 {
            bail!("--jobs must be at least 1");
        }
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?.install(f))
}

fn config_for(common: &Common) -> Result<AugmentationConfig> {
    let mut cfg = match &common.config {
        Some(p) => load_config_file(p).with_context(|| format!("loading {}", p.display()))?,
        None => AugmentationConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &AugmentationConfig) -> Result<PathBuf> {
    common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .context("no output directory: pass --out or set output_dir")
}

fn rigs_from(path: &Path) -> Result<Vec<augmentor::pipeline::CameraRig>> {
    load_rigs(path).with_context(|| format!("loading rigs from {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Augment { common, rigs } => {
            let cfg = config_for(&common)?;
            let out = out_dir(&common, &cfg)?;
            let rigs = rigs_from(&rigs)?;
            let manifest = with_pool(common.jobs, || augment_dataset(&cfg, &rigs, &out))??;
            println!(
                "wrote {} composites to {} (config {})",
                manifest.records.len(),
                out.display(),
                &manifest.config_fingerprint[..12]
            );
        }
        Command::Birdseye {
            common,
            rigs,
            rig,
            meters_per_pixel,
            extent,
        } => {
            let cfg = config_for(&common)?;
            let out = out_dir(&common, &cfg)?;
            let extent = match extent.as_deref() {
                Some([x_min, x_max, z_min, z_max]) => GroundExtent {
                    x_min: *x_min,
                    x_max: *x_max,
                    z_min: *z_min,
                    z_max: *z_max,
                },
                Some(_) => bail!("--extent takes four values"),
                None => DEFAULT_EXTENT,
            };
            let rigs = rigs_from(&rigs)?;
            let selected: Vec<_> = rigs
                .iter()
                .filter(|r| rig.as_ref().is_none_or(|id| &r.id == id))
                .collect();
            if selected.is_empty() {
                bail!("no rig matches {}", rig.unwrap_or_default());
            }
            for r in selected {
                let e = export_birdseye(r, meters_per_pixel, &extent, &out)?;
                println!("{} {}x{} -> {}", r.id, e.meta.width, e.meta.height, e.image.display());
            }
        }
        Command::Stats { manifest, json } => {
            let stats = compute_stats(&manifest)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                print!("{}", stats.to_table());
            }
        }
        Command::RenderDebug {
            common,
            rigs,
            rig_index,
            augmentation,
        } => {
            let cfg = config_for(&common)?;
            let out = out_dir(&common, &cfg)?;
            let rigs = rigs_from(&rigs)?;
            let res = with_pool(common.jobs, || render_debug(&cfg, &rigs, rig_index, augmentation, &out))??;
            println!(
                "rig {} augmentation {}: {} cars, buffers in {}",
                res.record.rig_id,
                augmentation,
                res.record.placements.len(),
                out.display()
            );
        }
        Command::Demo {
            out,
            rigs,
            width,
            height,
            seed,
        } => {
            let opts = DemoOptions {
                rigs,
                width,
                height,
                seed,
                ..DemoOptions::default()
            };
            let fx = write_fixtures(&out, &opts)?;
            println!("rigs: {}\nconfig: {}", fx.rigs.display(), fx.config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
