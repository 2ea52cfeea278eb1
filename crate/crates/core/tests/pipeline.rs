use std::fs;
use std::path::Path;

use dnfs_core::arch::{count_parameters, ArchSpec, Family};
use dnfs_core::data::pgm::{read_mask_pgm, write_mask_pgm};
use dnfs_core::data::{Dataset, Split};
use dnfs_core::train::{
    self, evaluate, evaluate_checkpoint, predict_mask, read_metrics, BEST_CHECKPOINT,
    LAST_CHECKPOINT, METRICS_FILE, METRICS_HEADER, SWEEP_FILE, SWEEP_HEADER,
};
use dnfs_core::{Checkpoint, Error, RunConfig};

fn tiny_config(root: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        data_dir: root.join("data"),
        out_dir: root.join("run"),
        samples: 24,
        image_size: 32,
        multiplier: 2,
        epochs: 3,
        batch_size: 4,
        seed: 17,
        ..RunConfig::default()
    };
    cfg.fractions = [0.75, 0.125, 0.125];
    cfg
}

fn with_data(root: &Path) -> RunConfig {
    let cfg = tiny_config(root);
    train::generate_dataset(&cfg).unwrap();
    cfg
}

fn bytes(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn zero_epochs_writes_initial_checkpoint_and_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = with_data(dir.path());
    cfg.epochs = 0;
    let report = train::train(&cfg).unwrap();
    assert!(report.history.is_empty());
    assert_eq!(
        fs::read_to_string(cfg.out_dir.join(METRICS_FILE)).unwrap(),
        format!("{METRICS_HEADER}\n")
    );
    let ck = Checkpoint::load(cfg.out_dir.join(LAST_CHECKPOINT)).unwrap();
    assert_eq!(ck.epoch, 0);
    assert_eq!(ck.num_parameters(), report.params);
    assert!(!cfg.out_dir.join(BEST_CHECKPOINT).exists());
}

#[test]
fn identical_runs_are_byte_identical_and_resume_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_data(dir.path());
    let mut a = cfg.clone();
    a.out_dir = dir.path().join("a");
    let mut b = cfg.clone();
    b.out_dir = dir.path().join("b");
    train::train(&a).unwrap();
    train::train(&b).unwrap();
    for f in [METRICS_FILE, LAST_CHECKPOINT, BEST_CHECKPOINT] {
        assert_eq!(bytes(a.out_dir.join(f)), bytes(b.out_dir.join(f)), "{f}");
    }

    let mut c = cfg.clone();
    c.out_dir = dir.path().join("c");
    c.epochs = 2;
    train::train(&c).unwrap();
    c.epochs = 3;
    let resumed = train::resume(&c).unwrap();
    assert_eq!(resumed.resumed_from, Some(2));
    for f in [METRICS_FILE, LAST_CHECKPOINT, BEST_CHECKPOINT] {
        assert_eq!(bytes(a.out_dir.join(f)), bytes(c.out_dir.join(f)), "{f}");
    }
}

#[test]
fn best_checkpoint_reproduces_logged_val_iou() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_data(dir.path());
    let report = train::train(&cfg).unwrap();
    let rows = read_metrics(cfg.out_dir.join(METRICS_FILE)).unwrap();
    assert_eq!(rows.len(), 3);
    let best = report.best.unwrap();
    let ck = Checkpoint::load(cfg.out_dir.join(BEST_CHECKPOINT)).unwrap();
    assert_eq!(rows[ck.epoch as usize - 1], best);
    let eval = evaluate_checkpoint(
        cfg.out_dir.join(BEST_CHECKPOINT),
        &cfg.data_dir,
        Split::Val,
        &cfg.loss_config(),
    )
    .unwrap();
    assert!((eval.mean_iou - best.val_iou).abs() <= 1e-6);
    assert!((eval.mean_black_recall - best.val_black_recall).abs() <= 1e-6);
}

#[test]
fn copies_of_one_sample_evaluate_like_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_data(dir.path());
    let ds = Dataset::load(&cfg.data_dir).unwrap();
    let mut net = cfg.arch_spec().build::<f32>().unwrap();
    net.init_parameters(3);
    let s = &ds.samples[0];
    let one = evaluate(&net, &[s], &cfg.loss_config()).unwrap();
    let many = evaluate(&net, &[s; 21], &cfg.loss_config()).unwrap();
    assert!((0.0..=1.0).contains(&one.mean_iou));
    assert!((one.mean_iou - many.mean_iou).abs() <= 1e-12);
    assert!((one.mean_black_recall - many.mean_black_recall).abs() <= 1e-12);
    assert!((one.mean_loss - many.mean_loss).abs() <= 1e-9);
}

#[test]
fn prediction_is_binary_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_data(dir.path());
    train::train(&cfg).unwrap();
    let (net, _) = Checkpoint::load(cfg.out_dir.join(LAST_CHECKPOINT))
        .unwrap()
        .restore()
        .unwrap();
    let ds = Dataset::load(&cfg.data_dir).unwrap();
    let img = &ds.samples[0].image;
    let (p1, p2) = (dir.path().join("p1.pgm"), dir.path().join("p2.pgm"));
    write_mask_pgm(&p1, &predict_mask(&net, img, 0.5).unwrap()).unwrap();
    write_mask_pgm(&p2, &predict_mask(&net, img, 0.5).unwrap()).unwrap();
    assert_eq!(bytes(&p1), bytes(&p2));
    let raw = bytes(&p1);
    let payload = &raw[raw.len() - 32 * 32..];
    assert!(payload.iter().all(|&b| b == 0 || b == 255));
    assert!(read_mask_pgm(&p1).unwrap().is_binary());
}

#[test]
fn wrong_image_size_names_the_divisibility_requirement() {
    let net = ArchSpec::dnfs(1).build::<f32>().unwrap();
    let img = dnfs_core::data::Image::filled(12, 16, 0.5);
    let err = predict_mask(&net, &img, 0.5).unwrap_err().to_string();
    assert!(err.contains("multiples of 8"), "{err}");
}

#[test]
fn missing_dataset_is_a_clear_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let err = train::train(&cfg).unwrap_err().to_string();
    assert!(err.contains("manifest"), "{err}");
}

#[test]
fn resume_rejects_a_different_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = with_data(dir.path());
    cfg.epochs = 1;
    train::train(&cfg).unwrap();
    cfg.multiplier = 4;
    cfg.epochs = 2;
    assert!(matches!(
        train::resume(&cfg),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn exploding_training_aborts_with_epoch_and_step() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = with_data(dir.path());
    cfg.learning_rate = 1e30;
    cfg.psi = 1.0;
    let err = train::train(&cfg).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::NonFinite(_)), "{msg}");
    assert!(msg.contains("epoch") && msg.contains("step"), "{msg}");
}

#[test]
fn sweep_rows_are_sorted_and_count_checked() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = with_data(dir.path());
    cfg.epochs = 1;
    let out = dir.path().join("sweep");
    let rows = train::sweep(
        &cfg,
        &[Family::UnetLike, Family::Dnfs],
        &[2, 1],
        &[0.7, 0.3],
        &out,
    )
    .unwrap();
    assert_eq!(rows.len(), 8);
    let keys: Vec<_> = rows
        .iter()
        .map(|r| (r.family.name(), r.multiplier, r.psi))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(keys, sorted);
    for r in &rows {
        let net = ArchSpec::new(r.family, r.multiplier)
            .build::<f32>()
            .unwrap();
        assert_eq!(r.params, count_parameters(&net));
        assert!(r.outcome.is_ok());
    }
    let csv = fs::read_to_string(out.join(SWEEP_FILE)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(SWEEP_HEADER));
    assert_eq!(lines.count(), 8);
}

#[test]
fn single_cell_sweep_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = with_data(dir.path());
    cfg.epochs = 1;
    let rows = train::sweep(&cfg, &[Family::Dnfs], &[1], &[0.5], dir.path().join("s")).unwrap();
    assert_eq!(rows.len(), 1);
}
