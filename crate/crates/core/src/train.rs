//! Training, evaluation, prediction and sweep drivers shared by the CLI and
//! the Python bindings.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{count_parameters, ArchSpec, Family};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::dataset::mix_seed;
use crate::data::{batch_tensors, image_tensor, Dataset, Image, Mask, Sample, Split};
use crate::error::{Error, Result};
use crate::loss::{
    black_pixel_correctness, clamp_probabilities, composite_loss, iou_metric, LossConfig, MaskPair,
};
use crate::nn::{optimizer_step, Mode, Network, OptimizerState};

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "epoch,train_loss,val_loss,val_iou,val_black_recall";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const REPORT_FILE: &str = "report.txt";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_HEADER: &str = "arch,multiplier,psi,params,train_seconds,val_iou,val_black_recall";

const EVAL_BATCH: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_iou: f64,
    pub val_black_recall: f64,
}

impl EpochMetrics {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.train_loss, self.val_loss, self.val_iou, self.val_black_recall
        )
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Format(format!(
                "metrics row {line:?} needs 5 fields"
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Format(format!("bad number {s:?} in metrics row")))
        };
        Ok(EpochMetrics {
            epoch: f[0]
                .parse()
                .map_err(|_| Error::Format(format!("bad epoch {:?}", f[0])))?,
            train_loss: num(f[1])?,
            val_loss: num(f[2])?,
            val_iou: num(f[3])?,
            val_black_recall: num(f[4])?,
        })
    }
}

/// Parse a metrics log, checking the header.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<EpochMetrics>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format(format!(
            "{}: expected header {METRICS_HEADER:?}",
            path.display()
        )));
    }
    lines.map(EpochMetrics::from_csv_row).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    /// Mean per-sample composite loss.
    pub mean_loss: f64,
    pub mean_iou: f64,
    /// Averaged over samples that contain at least one black pixel.
    pub mean_black_recall: f64,
    pub recall_samples: usize,
}

/// Per-sample metrics averaged over `samples`.
pub fn evaluate(net: &Network<f32>, samples: &[&Sample], cfg: &LossConfig) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    cfg.validate()?;
    let (mut loss, mut iou, mut recall, mut recall_n) = (0.0, 0.0, 0.0, 0usize);
    for chunk in samples.chunks(EVAL_BATCH) {
        let (x, y) = batch_tensors::<f32>(chunk)?;
        let (p, _) = net.forward(&x, Mode::Eval)?;
        for i in 0..chunk.len() {
            let pi = p.batch_slice(i, 1)?;
            let yi = y.batch_slice(i, 1)?;
            let raw = MaskPair::new(&pi, &yi)?;
            iou += iou_metric(&raw, cfg.threshold)?;
            if yi.data().contains(&1.0) {
                recall += black_pixel_correctness(&raw, cfg.threshold)?;
                recall_n += 1;
            }
            let clamped = clamp_probabilities(&pi);
            let (l, _) = composite_loss(&MaskPair::new(&clamped, &yi)?, cfg)?;
            loss += l as f64;
        }
    }
    let n = samples.len() as f64;
    Ok(EvalReport {
        samples: samples.len(),
        mean_loss: loss / n,
        mean_iou: iou / n,
        mean_black_recall: if recall_n > 0 {
            recall / recall_n as f64
        } else {
            f64::NAN
        },
        recall_samples: recall_n,
    })
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub arch: ArchSpec,
    pub params: usize,
    /// Mean composite loss over the training split before the first step of
    /// this run.
    pub initial_train_loss: f64,
    /// Mean minibatch loss of the last epoch (the initial loss if no epoch ran).
    pub final_train_loss: f64,
    /// Rows appended by this run.
    pub history: Vec<EpochMetrics>,
    /// Best validation IoU row over the whole log, including resumed epochs.
    pub best: Option<EpochMetrics>,
    /// Wall-clock seconds spent in optimization steps.
    pub train_seconds: f64,
    pub train_eval: EvalReport,
    pub resumed_from: Option<u32>,
}

impl TrainReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "arch = {}\nparams = {}\ninitial_train_loss = {}\nfinal_train_loss = {}\ntrain_seconds = {}\ntrain_iou = {}\ntrain_black_recall = {}\n",
            self.arch,
            self.params,
            self.initial_train_loss,
            self.final_train_loss,
            self.train_seconds,
            self.train_eval.mean_iou,
            self.train_eval.mean_black_recall
        );
        if let Some(b) = &self.best {
            s.push_str(&format!(
                "best_epoch = {}\nbest_val_iou = {}\nbest_val_black_recall = {}\n",
                b.epoch, b.val_iou, b.val_black_recall
            ));
        }
        s
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Generate the synthetic dataset described by `cfg` into `cfg.data_dir`.
pub fn generate_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let g = cfg.generate_config();
    Dataset::generate(&cfg.data_dir, &g)
}

/// Fresh training run into `cfg.out_dir`, replacing any previous log.
pub fn train(cfg: &RunConfig) -> Result<TrainReport> {
    run(cfg, false)
}

/// Continue the run in `cfg.out_dir` from its last checkpoint up to
/// `cfg.epochs` total epochs.
pub fn resume(cfg: &RunConfig) -> Result<TrainReport> {
    run(cfg, true)
}

fn run(cfg: &RunConfig, resume: bool) -> Result<TrainReport> {
    cfg.validate()?;
    let ds = Dataset::load(&cfg.data_dir)?;
    let train_set = ds.split(Split::Train)?;
    let val_set = ds.split(Split::Val)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid(format!(
            "dataset at {} needs non-empty train and val splits",
            cfg.data_dir.display()
        )));
    }
    let arch = cfg.arch_spec();
    let loss_cfg = cfg.loss_config();
    let out = &cfg.out_dir;
    ensure_dir(out)?;
    let metrics_path = out.join(METRICS_FILE);
    let last_path = out.join(LAST_CHECKPOINT);
    let best_path = out.join(BEST_CHECKPOINT);

    let (mut net, mut opt, start, mut best) = if resume {
        let ck = Checkpoint::load(&last_path)?;
        if ck.arch != arch {
            return Err(Error::invalid(format!(
                "checkpoint architecture {} does not match configured {}",
                ck.arch, arch
            )));
        }
        let (net, opt) = ck.restore()?;
        let logged = read_metrics(&metrics_path)?;
        if logged.len() != ck.epoch as usize {
            return Err(Error::InvalidState(format!(
                "{} has {} rows but the checkpoint is at epoch {}",
                metrics_path.display(),
                logged.len(),
                ck.epoch
            )));
        }
        let best = best_row(&logged);
        (net, opt, ck.epoch, best)
    } else {
        let mut net: Network<f32> = arch.build()?;
        net.init_parameters(cfg.seed);
        let opt = OptimizerState::for_network(cfg.adam_config(), &net);
        fs::write(&metrics_path, format!("{METRICS_HEADER}\n"))
            .map_err(|e| Error::io(&metrics_path, e))?;
        let _ = fs::remove_file(&best_path);
        (net, opt, 0, None)
    };
    if let Some(s) = train_set.first() {
        if s.image.height % arch.spatial_multiple() != 0
            || s.image.width % arch.spatial_multiple() != 0
        {
            return Err(Error::invalid(format!(
                "dataset images are {}x{}; {} needs multiples of {}",
                s.image.height,
                s.image.width,
                arch.preset_name(),
                arch.spatial_multiple()
            )));
        }
    }
    fs::write(out.join("config.txt"), cfg.to_text())
        .map_err(|e| Error::io(out.join("config.txt"), e))?;

    let initial = evaluate(&net, &train_set, &loss_cfg)?;
    if start == 0 {
        Checkpoint::capture(&arch, &net, &opt, 0, cfg.seed).save(&last_path)?;
    }

    let mut history = Vec::new();
    let mut train_seconds = 0.0;
    for epoch in start + 1..=cfg.epochs as u32 {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
            cfg.seed,
            epoch as u64,
        )));
        let clock = Instant::now();
        let (mut loss_sum, mut steps) = (0.0f64, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| train_set[i]).collect();
            let loss = train_step(&mut net, &mut opt, &batch, &loss_cfg).map_err(|e| match e {
                Error::NonFinite(m) => {
                    Error::NonFinite(format!("{m} at epoch {epoch}, step {step}"))
                }
                other => other,
            })?;
            loss_sum += loss as f64;
            steps += 1;
        }
        train_seconds += clock.elapsed().as_secs_f64();

        let val = evaluate(&net, &val_set, &loss_cfg)?;
        let row = EpochMetrics {
            epoch,
            train_loss: loss_sum / steps as f64,
            val_loss: val.mean_loss,
            val_iou: val.mean_iou,
            val_black_recall: val.mean_black_recall,
        };
        append_line(&metrics_path, &row.to_csv_row())?;
        let ck = Checkpoint::capture(&arch, &net, &opt, epoch, cfg.seed);
        ck.save(&last_path)?;
        if best.is_none_or(|b: EpochMetrics| row.val_iou > b.val_iou) {
            ck.save(&best_path)?;
            best = Some(row);
        }
        history.push(row);
    }

    let train_eval = evaluate(&net, &train_set, &loss_cfg)?;
    let report = TrainReport {
        arch,
        params: count_parameters(&net),
        initial_train_loss: initial.mean_loss,
        final_train_loss: history.last().map_or(initial.mean_loss, |r| r.train_loss),
        history,
        best,
        train_seconds,
        train_eval,
        resumed_from: resume.then_some(start),
    };
    let path = out.join(REPORT_FILE);
    fs::write(&path, report.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// One forward/backward/update on a batch; returns the batch loss.
fn train_step(
    net: &mut Network<f32>,
    opt: &mut OptimizerState<f32>,
    batch: &[&Sample],
    cfg: &LossConfig,
) -> Result<f32> {
    let (x, y) = batch_tensors::<f32>(batch)?;
    let (p, cache) = net.forward(&x, Mode::Train)?;
    let clamped = clamp_probabilities(&p);
    let (loss, grad) = composite_loss(&MaskPair::new(&clamped, &y)?, cfg)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss {loss}")));
    }
    net.backward(cache, &grad)?;
    optimizer_step(net, opt)?;
    Ok(loss)
}

fn best_row(rows: &[EpochMetrics]) -> Option<EpochMetrics> {
    rows.iter()
        .fold(None, |best: Option<EpochMetrics>, r| match best {
            Some(b) if b.val_iou >= r.val_iou => Some(b),
            _ => Some(*r),
        })
}

/// Load a checkpoint and evaluate it on one split of a dataset.
pub fn evaluate_checkpoint(
    checkpoint: impl AsRef<Path>,
    data_dir: impl AsRef<Path>,
    split: Split,
    cfg: &LossConfig,
) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let (net, _) = ck.restore()?;
    let ds = Dataset::load(data_dir)?;
    let samples = ds.split(split)?;
    if samples.is_empty() {
        return Err(Error::invalid(format!("split {split} is empty")));
    }
    if let Some(s) = samples.first() {
        check_image_size(&net, &s.image)?;
    }
    evaluate(&net, &samples, cfg)
}

fn check_image_size(net: &Network<f32>, image: &Image) -> Result<()> {
    let m = net.spatial_multiple();
    if !image.height.is_multiple_of(m) || !image.width.is_multiple_of(m) || image.height == 0 || image.width == 0 {
        return Err(Error::invalid(format!(
            "image is {}x{}; height and width must be multiples of {m} for this architecture",
            image.height, image.width
        )));
    }
    Ok(())
}

/// Per-pixel boundary probabilities for one image.
pub fn predict_probabilities(net: &Network<f32>, image: &Image) -> Result<Vec<f32>> {
    check_image_size(net, image)?;
    let (p, _) = net.forward(&image_tensor::<f32>(image), Mode::Eval)?;
    Ok(p.into_vec())
}

/// Thresholded boundary mask for one image.
pub fn predict_mask(net: &Network<f32>, image: &Image, threshold: f64) -> Result<Mask> {
    let p = predict_probabilities(net, image)?;
    let t = threshold as f32;
    Mask::from_vec(
        image.height,
        image.width,
        p.iter().map(|&v| u8::from(v >= t)).collect(),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub family: Family,
    pub multiplier: usize,
    pub psi: f64,
    pub params: usize,
    pub train_seconds: f64,
    /// `(val_iou, val_black_recall)` of the best epoch, or the failure.
    pub outcome: std::result::Result<(f64, f64), String>,
}

impl SweepRow {
    pub fn to_csv_row(&self) -> String {
        let (iou, recall) = match &self.outcome {
            Ok((i, r)) => (i.to_string(), r.to_string()),
            Err(_) => ("failed".to_string(), "failed".to_string()),
        };
        format!(
            "{},{},{},{},{:.3},{},{}",
            self.family, self.multiplier, self.psi, self.params, self.train_seconds, iou, recall
        )
    }
}

pub fn sweep_cell_dir(root: &Path, family: Family, multiplier: usize, psi: f64) -> PathBuf {
    root.join(format!("{family}-{multiplier}-psi{psi}"))
}

/// Train every `(family, multiplier, psi)` combination on the dataset in
/// `base.data_dir`, each in its own directory under `out_dir`, and write
/// `sweep.csv` sorted by `(arch, multiplier, psi)`. Failed cells are kept.
pub fn sweep(
    base: &RunConfig,
    families: &[Family],
    multipliers: &[usize],
    psis: &[f64],
    out_dir: impl AsRef<Path>,
) -> Result<Vec<SweepRow>> {
    if families.is_empty() || multipliers.is_empty() || psis.is_empty() {
        return Err(Error::invalid(
            "sweep needs at least one arch, multiplier and psi",
        ));
    }
    let out_dir = out_dir.as_ref();
    ensure_dir(out_dir)?;
    let mut cells: Vec<(Family, usize, f64)> = Vec::new();
    for &f in families {
        for &m in multipliers {
            for &p in psis {
                cells.push((f, m, p));
            }
        }
    }
    cells.sort_by(|a, b| {
        a.0.name()
            .cmp(b.0.name())
            .then(a.1.cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
    });
    cells.dedup();

    let mut rows = Vec::with_capacity(cells.len());
    for (family, multiplier, psi) in cells {
        let mut cfg = base.clone();
        cfg.family = family;
        cfg.multiplier = multiplier;
        cfg.psi = psi;
        cfg.out_dir = sweep_cell_dir(out_dir, family, multiplier, psi);
        let params = cfg
            .arch_spec()
            .build::<f32>()
            .map(|n| count_parameters(&n))
            .unwrap_or(0);
        let row = match train(&cfg) {
            Ok(report) => SweepRow {
                family,
                multiplier,
                psi,
                params,
                train_seconds: report.train_seconds,
                outcome: report
                    .best
                    .map(|b| (b.val_iou, b.val_black_recall))
                    .ok_or_else(|| "no epochs trained".to_string()),
            },
            Err(e) => SweepRow {
                family,
                multiplier,
                psi,
                params,
                train_seconds: 0.0,
                outcome: Err(e.to_string()),
            },
        };
        rows.push(row);
    }
    let mut text = format!("{SWEEP_HEADER}\n");
    for r in &rows {
        text.push_str(&r.to_csv_row());
        text.push('\n');
    }
    let path = out_dir.join(SWEEP_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
