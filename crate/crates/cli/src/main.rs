use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fsfnet::checkpoint;
use fsfnet::data::{read_depth_png, read_intrinsics, synth_dataset, write_dataset, write_rgb_png, SceneConfig};
use fsfnet::hha::{encode_hha, CameraIntrinsics};
use fsfnet::metrics::MetricsReport;
use fsfnet::train::{ablate, evaluate, load_history_csv, train, RunConfig};

mod plot;

#[derive(Parser)]
#[command(name = "fsfnet", version, about = "RGB-D segmentation experiments on CPU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a 16-bit millimeter depth PNG as an 8-bit HHA PNG.
    ConvertHha {
        #[arg(long)]
        depth: PathBuf,
        /// JSON with fx, fy, cx, cy; defaults to focal length = width, centered principal point.
        #[arg(long)]
        intrinsics: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset in the rgb/depth/label/hha layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 6)]
        classes: usize,
        #[arg(long, default_value_t = 0.03)]
        noise: f32,
    },
    /// Train from a flat JSON config.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value`, value parsed as JSON when possible.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score a checkpoint on a dataset directory and write a JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to `<checkpoint>.report.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        batch_size: usize,
    },
    /// Train the four fusion variants over several seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Render loss curves and per-class IoU bars as SVG.
    Plot {
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let base = match path {
        Some(p) => RunConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    Ok(base.with_overrides(overrides)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn print_report(r: &MetricsReport) {
    println!(
        "mIoU {:.4}  pixel accuracy {:.4}  ({} pixels)",
        r.mean_iou, r.pixel_accuracy, r.scored_pixels
    );
    for (c, iou) in r.class_iou.iter().enumerate() {
        match iou {
            Some(v) => println!("  class {c}: {v:.4}"),
            None => println!("  class {c}: absent"),
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::ConvertHha { depth, intrinsics, out } => {
            let d = read_depth_png(&depth).with_context(|| format!("reading {}", depth.display()))?;
            let k = match intrinsics {
                Some(p) => read_intrinsics(&p)?,
                None => CameraIntrinsics::synthetic(d.width, d.height),
            };
            write_rgb_png(&out, &encode_hha(&d, &k)?)?;
        }
        Command::Synth {
            out,
            count,
            seed,
            size,
            classes,
            noise,
        } => {
            let cfg = SceneConfig {
                image_size: size,
                num_classes: classes,
                rgb_noise_sigma: noise,
                seed,
                ..SceneConfig::default()
            };
            let samples = synth_dataset(&cfg, count)?;
            write_dataset(&out, &samples, Some(&CameraIntrinsics::synthetic(size, size)))?;
            println!("wrote {count} samples to {}", out.display());
        }
        Command::Train { config, overrides } => {
            let cfg = run_config(config.as_deref(), &overrides)?;
            let (train_set, val_set, test_set) = cfg.datasets()?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            write_json(&cfg.out_dir.join("config.json"), &cfg)?;
            eprintln!(
                "training on {} samples ({} validation, {} test) for {} steps",
                train_set.len(),
                val_set.len(),
                test_set.len(),
                cfg.max_steps
            );
            let outcome = train(&cfg.model(), &cfg.train(), &train_set, &val_set, Some(&cfg.out_dir))?;
            if let Some(last) = outcome.history.last() {
                eprintln!(
                    "final loss {:.5} (l1 {:.5} l2 {:.5} l3 {:.5})",
                    last.total_loss, last.l1, last.l2, last.l3
                );
            }
            if let Some((step, miou)) = outcome.state.best {
                eprintln!("best validation mIoU {miou:.4} at step {step}");
            }
            if !test_set.is_empty() {
                let report = evaluate(&outcome.state.net, &test_set, cfg.batch_size)?.report()?;
                write_json(&cfg.out_dir.join("test_report.json"), &report)?;
                print_report(&report);
            }
        }
        Command::Eval {
            checkpoint: ckpt,
            data,
            out,
            batch_size,
        } => {
            let (net, _) = checkpoint::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let samples = fsfnet::data::load_dataset(&data)?;
            if samples.is_empty() {
                bail!("no samples under {}", data.display());
            }
            let report = evaluate(&net, &samples, batch_size)?.report()?;
            let out = out.unwrap_or_else(|| ckpt.with_extension("report.json"));
            write_json(&out, &report)?;
            print_report(&report);
        }
        Command::Ablate {
            config,
            seeds,
            overrides,
        } => {
            let cfg = run_config(config.as_deref(), &overrides)?;
            let seeds: Vec<u64> = (0..seeds).collect();
            let table = ablate(&cfg, &seeds, |name, seed, miou| {
                eprintln!("{name:>10} seed {seed}: test mIoU {miou:.4}")
            })?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            write_json(&cfg.out_dir.join("ablation.json"), &table)?;
            std::fs::write(cfg.out_dir.join("ablation.md"), table.to_markdown())?;
            print!("{}", table.to_markdown());
        }
        Command::Plot { history, report, out } => {
            if history.is_none() && report.is_none() {
                bail!("nothing to plot: pass --history and/or --report");
            }
            std::fs::create_dir_all(&out)?;
            if let Some(h) = history {
                let rows = load_history_csv(&h)?;
                let path = out.join("loss.svg");
                plot::loss_curves(&path, &rows)?;
                println!("wrote {}", path.display());
            }
            if let Some(r) = report {
                let text = std::fs::read_to_string(&r).with_context(|| format!("reading {}", r.display()))?;
                let report: MetricsReport = serde_json::from_str(&text)?;
                let path = out.join("class_iou.svg");
                plot::class_iou_bars(&path, &report)?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}
