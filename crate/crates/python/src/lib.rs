use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dnfs_core::arch::{self, ArchSpec};
use dnfs_core::data::dataset::{generate_sample as core_sample, GenerateConfig};
use dnfs_core::data::{Grid, Image, Split};
use dnfs_core::loss::{self, LossConfig, MaskPair};
use dnfs_core::train::{self as core_train, EvalReport, TrainReport};
use dnfs_core::{Checkpoint, Error, Network, RunConfig, Tensor};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn flat_pair(pred: Vec<f64>, target: Vec<f64>) -> PyResult<(Tensor<f64>, Tensor<f64>)> {
    let n = pred.len();
    let p = Tensor::from_vec([1, 1, 1, n], pred).map_err(to_py)?;
    let t = Tensor::from_vec([1, 1, 1, target.len()], target).map_err(to_py)?;
    Ok((p, t))
}

fn rows<T: Copy>(g: &Grid<T>) -> Vec<Vec<T>> {
    g.data.chunks(g.width).map(|r| r.to_vec()).collect()
}

fn image_from_rows(rows: Vec<Vec<f32>>) -> PyResult<Image> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("image rows must have equal length"));
    }
    Image::from_vec(h, w, rows.into_iter().flatten().collect()).map_err(to_py)
}

/// All architecture preset names, e.g. `dnfs-8`.
#[pyfunction]
fn presets() -> Vec<String> {
    arch::preset_names()
}

/// Exact parameter count of a preset, by enumerating its weights.
#[pyfunction]
fn count_parameters(preset: &str) -> PyResult<usize> {
    let net: Network<f32> = ArchSpec::from_preset(preset)
        .and_then(|s| s.build())
        .map_err(to_py)?;
    Ok(arch::count_parameters(&net))
}

/// Closed-form parameter count of a preset.
#[pyfunction]
fn analytic_parameter_count(preset: &str) -> PyResult<usize> {
    ArchSpec::from_preset(preset)
        .and_then(|s| arch::analytic_parameter_count(&s))
        .map_err(to_py)
}

/// Composite loss of flat probability and binary target lists.
/// Returns `(loss, gradient)`; probabilities are clamped first.
#[pyfunction]
#[pyo3(signature = (pred, target, psi=0.5, smooth_eps=1.0))]
fn composite_loss(
    pred: Vec<f64>,
    target: Vec<f64>,
    psi: f64,
    smooth_eps: f64,
) -> PyResult<(f64, Vec<f64>)> {
    let (p, t) = flat_pair(pred, target)?;
    let p = loss::clamp_probabilities(&p);
    let cfg = LossConfig {
        psi,
        smooth_eps,
        ..LossConfig::default()
    };
    let pair = MaskPair::new(&p, &t).map_err(to_py)?;
    let (l, g) = loss::composite_loss(&pair, &cfg).map_err(to_py)?;
    Ok((l, g.into_vec()))
}

#[pyfunction]
#[pyo3(signature = (pred, target, threshold=0.5))]
fn iou(pred: Vec<f64>, target: Vec<f64>, threshold: f64) -> PyResult<f64> {
    let (p, t) = flat_pair(pred, target)?;
    loss::iou_metric(&MaskPair::new(&p, &t).map_err(to_py)?, threshold).map_err(to_py)
}

/// Fraction of target boundary pixels predicted as boundary.
#[pyfunction]
#[pyo3(signature = (pred, target, threshold=0.5))]
fn black_pixel_recall(pred: Vec<f64>, target: Vec<f64>, threshold: f64) -> PyResult<f64> {
    let (p, t) = flat_pair(pred, target)?;
    loss::black_pixel_correctness(&MaskPair::new(&p, &t).map_err(to_py)?, threshold).map_err(to_py)
}

type SampleRows = (Vec<Vec<f32>>, Vec<Vec<u8>>);

/// One synthetic `(image, mask)` pair as nested row lists.
#[pyfunction]
#[pyo3(signature = (seed, index, size=64, num_horizons=4, thickness=3, noise_level=0.1))]
fn generate_sample(
    seed: u64,
    index: usize,
    size: usize,
    num_horizons: usize,
    thickness: usize,
    noise_level: f64,
) -> PyResult<SampleRows> {
    let cfg = GenerateConfig {
        seed,
        height: size,
        width: size,
        num_horizons,
        thickness,
        noise_level,
        ..GenerateConfig::default()
    };
    let s = core_sample(&cfg, index).map_err(to_py)?;
    Ok((rows(&s.image), rows(&s.mask)))
}

/// Run configuration; keyword arguments use the config-file keys.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = PyConfig {
            inner: RunConfig::default(),
        };
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                cfg.set(&k.extract::<String>()?, &v)?;
            }
        }
        Ok(cfg)
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig {
            inner: RunConfig::from_file(path).map_err(to_py)?,
        })
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let text = value.str()?.to_string();
        self.inner.set(key, &text).map_err(to_py)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(arch={}, psi={}, epochs={})",
            self.inner.arch_spec().preset_name(),
            self.inner.psi,
            self.inner.epochs
        )
    }
}

fn eval_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("samples", r.samples)?;
    d.set_item("mean_loss", r.mean_loss)?;
    d.set_item("mean_iou", r.mean_iou)?;
    d.set_item("mean_black_recall", r.mean_black_recall)?;
    Ok(d)
}

fn report_dict<'py>(py: Python<'py>, r: &TrainReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("arch", r.arch.preset_name())?;
    d.set_item("params", r.params)?;
    d.set_item("initial_train_loss", r.initial_train_loss)?;
    d.set_item("final_train_loss", r.final_train_loss)?;
    d.set_item("train_seconds", r.train_seconds)?;
    let history: Vec<(u32, f64, f64, f64, f64)> = r
        .history
        .iter()
        .map(|m| {
            (
                m.epoch,
                m.train_loss,
                m.val_loss,
                m.val_iou,
                m.val_black_recall,
            )
        })
        .collect();
    d.set_item("history", history)?;
    d.set_item("train", eval_dict(py, &r.train_eval)?)?;
    Ok(d)
}

/// Write the dataset described by `config` into its `data_dir`.
/// Returns `(train, val, test)` sizes.
#[pyfunction]
fn generate_dataset(py: Python<'_>, config: PyConfig) -> PyResult<(usize, usize, usize)> {
    let ds = py
        .detach(|| core_train::generate_dataset(&config.inner))
        .map_err(to_py)?;
    let m = &ds.manifest;
    Ok((m.train.len(), m.val.len(), m.test.len()))
}

#[pyfunction]
#[pyo3(signature = (config, resume=false))]
fn train<'py>(py: Python<'py>, config: PyConfig, resume: bool) -> PyResult<Bound<'py, PyDict>> {
    let report = py
        .detach(|| {
            if resume {
                core_train::resume(&config.inner)
            } else {
                core_train::train(&config.inner)
            }
        })
        .map_err(to_py)?;
    report_dict(py, &report)
}

/// Evaluate a checkpoint on one split of a dataset directory.
#[pyfunction]
#[pyo3(signature = (checkpoint, data_dir, split="val", threshold=0.5, psi=0.5))]
fn evaluate<'py>(
    py: Python<'py>,
    checkpoint: PathBuf,
    data_dir: PathBuf,
    split: &str,
    threshold: f64,
    psi: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let split: Split = split.parse().map_err(to_py)?;
    let cfg = LossConfig {
        psi,
        threshold,
        ..LossConfig::default()
    };
    let report = py
        .detach(|| core_train::evaluate_checkpoint(&checkpoint, &data_dir, split, &cfg))
        .map_err(to_py)?;
    eval_dict(py, &report)
}

/// A network restored from a checkpoint, or freshly initialized.
#[pyclass(name = "Model")]
struct PyModel {
    net: Network<f32>,
    arch: String,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (preset, seed=0))]
    fn new(preset: &str, seed: u64) -> PyResult<Self> {
        let spec = ArchSpec::from_preset(preset).map_err(to_py)?;
        let mut net: Network<f32> = spec.build().map_err(to_py)?;
        net.init_parameters(seed);
        Ok(PyModel {
            net,
            arch: spec.to_string(),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(path).map_err(to_py)?;
        let (net, _) = ck.restore().map_err(to_py)?;
        Ok(PyModel {
            net,
            arch: ck.arch.to_string(),
        })
    }

    #[getter]
    fn arch(&self) -> &str {
        &self.arch
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.net.num_parameters()
    }

    /// Boundary probabilities for an image given as row lists.
    fn predict_probabilities(&self, image: Vec<Vec<f32>>) -> PyResult<Vec<Vec<f32>>> {
        let img = image_from_rows(image)?;
        let p = core_train::predict_probabilities(&self.net, &img).map_err(to_py)?;
        Ok(p.chunks(img.width).map(|r| r.to_vec()).collect())
    }

    /// Thresholded mask, 1 for boundary.
    #[pyo3(signature = (image, threshold=0.5))]
    fn predict(&self, image: Vec<Vec<f32>>, threshold: f64) -> PyResult<Vec<Vec<u8>>> {
        let img = image_from_rows(image)?;
        let m = core_train::predict_mask(&self.net, &img, threshold).map_err(to_py)?;
        Ok(rows(&m))
    }

    fn __repr__(&self) -> String {
        format!("Model({}, params={})", self.arch, self.net.num_parameters())
    }
}

#[pymodule]
fn dnfs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(count_parameters, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_parameter_count, m)?)?;
    m.add_function(wrap_pyfunction!(composite_loss, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(black_pixel_recall, m)?)?;
    m.add_function(wrap_pyfunction!(generate_sample, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
