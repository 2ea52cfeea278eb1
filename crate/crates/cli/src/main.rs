use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dnfs_core::arch::{count_parameters, ArchSpec, Family};
use dnfs_core::checkpoint::Checkpoint;
use dnfs_core::config::RunConfig;
use dnfs_core::data::pgm::{read_image_pgm, write_mask_pgm};
use dnfs_core::data::Split;
use dnfs_core::train;

/// Seismic facies boundary segmentation: data generation, training,
/// evaluation and architecture sweeps.
#[derive(Parser)]
#[command(name = "dnfs", version)]
struct Cli {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override any config key, e.g. `--set noise_level=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (images/, masks/, manifest.tsv).
    Generate {
        /// Dataset directory (config key `data_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        thickness: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a network; writes metrics.csv, last.ckpt and best.ckpt.
    Train {
        #[command(flatten)]
        run: RunFlags,
        /// Continue from last.ckpt in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long)]
        threshold: Option<f64>,
        /// Report file; defaults to eval-<split>.txt next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict a boundary mask (black lines on white) for one PGM image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Print exact parameter counts for architecture presets.
    CountParams {
        /// Presets such as dnfs-8 or unet-like-16; all presets if omitted.
        presets: Vec<String>,
    },
    /// Train every arch x multiplier x psi combination and write sweep.csv.
    Sweep {
        #[command(flatten)]
        run: RunFlags,
        /// Comma-separated multipliers.
        #[arg(long, value_delimiter = ',', required = true)]
        multipliers: Vec<usize>,
        /// Comma-separated psi values.
        #[arg(long, value_delimiter = ',', required = true)]
        psis: Vec<f64>,
        /// Comma-separated families (dnfs, unet-like); defaults to the configured arch.
        #[arg(long, value_delimiter = ',')]
        archs: Vec<String>,
    },
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Family (dnfs, unet-like) or preset (dnfs-8).
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    multiplier: Option<usize>,
    #[arg(long)]
    psi: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl RunFlags {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(v) = &self.data {
            cfg.data_dir = v.clone();
        }
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = &self.arch {
            cfg.set("arch", v)?;
        }
        if let Some(v) = self.multiplier {
            cfg.multiplier = v;
        }
        if let Some(v) = self.psi {
            cfg.psi = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        Ok(())
    }
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = base_config(&cli)?;
    match cli.command {
        Command::Generate {
            out,
            samples,
            image_size,
            thickness,
            seed,
        } => {
            if let Some(v) = out {
                cfg.data_dir = v;
            }
            if let Some(v) = samples {
                cfg.samples = v;
            }
            if let Some(v) = image_size {
                cfg.image_size = v;
            }
            if let Some(v) = thickness {
                cfg.thickness = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            let ds = train::generate_dataset(&cfg)?;
            println!(
                "wrote {} samples to {} (train {}, val {}, test {})",
                ds.samples.len(),
                cfg.data_dir.display(),
                ds.manifest.train.len(),
                ds.manifest.val.len(),
                ds.manifest.test.len()
            );
        }
        Command::Train { run, resume } => {
            run.apply(&mut cfg)?;
            let report = if resume {
                train::resume(&cfg)?
            } else {
                train::train(&cfg)?
            };
            for row in &report.history {
                println!(
                    "epoch {:>3}  train_loss {:.5}  val_loss {:.5}  val_iou {:.4}  val_black_recall {:.4}",
                    row.epoch, row.train_loss, row.val_loss, row.val_iou, row.val_black_recall
                );
            }
            print!("{}", report.to_text());
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            threshold,
            out,
        } => {
            if let Some(v) = data {
                cfg.data_dir = v;
            }
            if let Some(v) = threshold {
                cfg.threshold = v;
            }
            let split: Split = split.parse()?;
            let report =
                train::evaluate_checkpoint(&checkpoint, &cfg.data_dir, split, &cfg.loss_config())?;
            let text = format!(
                "split = {split}\nsamples = {}\nmean_loss = {}\nmean_iou = {}\nmean_black_recall = {}\n",
                report.samples, report.mean_loss, report.mean_iou, report.mean_black_recall
            );
            let out = out.unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .unwrap_or(Path::new("."))
                    .join(format!("eval-{split}.txt"))
            });
            fs::write(&out, &text).with_context(|| format!("writing {}", out.display()))?;
            print!("{text}");
        }
        Command::Predict {
            checkpoint,
            image,
            out,
            threshold,
        } => {
            let threshold = threshold.unwrap_or(cfg.threshold);
            let (net, _) = Checkpoint::load(&checkpoint)?.restore()?;
            let img = read_image_pgm(&image)?;
            let mask = train::predict_mask(&net, &img, threshold)?;
            write_mask_pgm(&out, &mask)?;
            println!(
                "wrote {} ({} boundary pixels of {})",
                out.display(),
                mask.count_ones(),
                mask.data.len()
            );
        }
        Command::CountParams { presets } => {
            let names = if presets.is_empty() {
                dnfs_core::arch::preset_names()
            } else {
                presets
            };
            for name in names {
                let spec = ArchSpec::from_preset(&name)?;
                let net = spec.build::<f32>()?;
                println!("{name}\t{}", count_parameters(&net));
            }
        }
        Command::Sweep {
            run,
            multipliers,
            psis,
            archs,
        } => {
            run.apply(&mut cfg)?;
            let families: Vec<Family> = if archs.is_empty() {
                vec![cfg.family]
            } else {
                archs
                    .iter()
                    .map(|a| a.parse::<Family>())
                    .collect::<std::result::Result<_, _>>()?
            };
            if multipliers.is_empty() || psis.is_empty() {
                bail!("sweep needs at least one multiplier and one psi");
            }
            let rows = train::sweep(&cfg, &families, &multipliers, &psis, &cfg.out_dir)?;
            println!("{}", train::SWEEP_HEADER);
            for r in &rows {
                println!("{}", r.to_csv_row());
                if let Err(e) = &r.outcome {
                    eprintln!(
                        "cell {}-{} psi {} failed: {e}",
                        r.family, r.multiplier, r.psi
                    );
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
