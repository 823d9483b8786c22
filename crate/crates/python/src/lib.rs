//! Python bindings: `import esk`.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use esk_core::dataset_io::{self, AudioClip, SynthSpec};
use esk_core::features::{FeatureConfig, FeatureExtractor, FeatureKind, FeatureMatrix};
use esk_core::metrics;
use esk_core::pipeline::{self, ExperimentConfig};
use esk_core::svm::{self, SvmConfig};
use esk_core::tinynet::{self, NetConfig};
use esk_core::vad::{self, VadConfig};
use esk_core::{fusion, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn clip(samples: Vec<f64>, sample_rate: u32) -> PyResult<AudioClip> {
    AudioClip::new(samples, sample_rate).map_err(py_err)
}

fn to_rows(m: &FeatureMatrix) -> Vec<Vec<f64>> {
    (0..m.rows).map(|t| m.row(t).to_vec()).collect()
}

fn from_rows(rows: Vec<Vec<f64>>) -> PyResult<FeatureMatrix> {
    let cols = rows.first().map_or(0, Vec::len);
    let n = rows.len();
    FeatureMatrix::new(n, cols, rows.into_iter().flatten().collect(), FeatureKind::Mfcc).map_err(py_err)
}

/// Returns `(samples, sample_rate)`.
#[pyfunction]
fn read_wav(path: PathBuf) -> PyResult<(Vec<f64>, u32)> {
    let c = dataset_io::read_wav(path).map_err(py_err)?;
    Ok((c.samples, c.sample_rate))
}

#[pyfunction]
fn write_wav(path: PathBuf, samples: Vec<f64>, sample_rate: u32) -> PyResult<()> {
    dataset_io::write_wav(path, &clip(samples, sample_rate)?).map_err(py_err)
}

/// Writes a synthetic pitch-class dataset and returns the number of clips.
#[pyfunction]
#[pyo3(signature = (out_dir, n_classes=3, n_per_class=20, duration_s=1.0, seed=0, base_hz=200.0, offset_hz=0.0))]
fn synth_dataset(
    out_dir: PathBuf,
    n_classes: usize,
    n_per_class: usize,
    duration_s: f64,
    seed: u64,
    base_hz: f64,
    offset_hz: f64,
) -> PyResult<usize> {
    let spec = SynthSpec {
        n_classes,
        n_per_class,
        duration_s,
        seed,
        base_hz,
        offset_hz,
        ..SynthSpec::default()
    };
    dataset_io::synth_dataset(&spec, out_dir).map(|m| m.len()).map_err(py_err)
}

/// Per-frame voiced flags.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate, mode=2, frame_ms=30))]
fn vad_flags(samples: Vec<f64>, sample_rate: u32, mode: u8, frame_ms: u32) -> PyResult<Vec<bool>> {
    let cfg = VadConfig {
        mode,
        frame_ms,
        ..VadConfig::default()
    };
    Ok(vad::classify_frames(&clip(samples, sample_rate)?, &cfg).map_err(py_err)?.flags)
}

/// Voiced samples with hangover; the input comes back unchanged if no frame is voiced.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate, mode=2, frame_ms=30, hangover=2))]
fn apply_vad(samples: Vec<f64>, sample_rate: u32, mode: u8, frame_ms: u32, hangover: usize) -> PyResult<Vec<f64>> {
    let cfg = VadConfig {
        mode,
        frame_ms,
        hangover_frames: hangover,
        ..VadConfig::default()
    };
    Ok(vad::apply_vad(&clip(samples, sample_rate)?, &cfg).map_err(py_err)?.samples)
}

fn extract(samples: Vec<f64>, sample_rate: u32, kind: FeatureKind, n_mfcc: Option<usize>) -> PyResult<Vec<Vec<f64>>> {
    let mut cfg = FeatureConfig::default();
    if let Some(n) = n_mfcc {
        cfg.n_mfcc = n;
    }
    let ex = FeatureExtractor::new(&cfg, sample_rate).map_err(py_err)?;
    Ok(to_rows(&ex.extract(&clip(samples, sample_rate)?, kind).map_err(py_err)?))
}

/// MFCC frames (rows) with default framing.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate, n_mfcc=None))]
fn mfcc(samples: Vec<f64>, sample_rate: u32, n_mfcc: Option<usize>) -> PyResult<Vec<Vec<f64>>> {
    extract(samples, sample_rate, FeatureKind::Mfcc, n_mfcc)
}

/// Log mel filterbank frames (rows) with default framing.
#[pyfunction]
fn logfbank(samples: Vec<f64>, sample_rate: u32) -> PyResult<Vec<Vec<f64>>> {
    extract(samples, sample_rate, FeatureKind::LogFbank, None)
}

/// Residual network with a pooled embedding and a linear head.
#[pyclass(name = "NetModel", module = "esk")]
struct PyNetModel {
    inner: tinynet::NetModel,
}

#[pymethods]
impl PyNetModel {
    #[new]
    #[pyo3(signature = (preset="test", embed_dim=16, n_classes=3, seed=0))]
    fn new(preset: &str, embed_dim: usize, n_classes: usize, seed: u64) -> PyResult<Self> {
        let mut cfg = NetConfig::from_preset(preset, embed_dim, n_classes).map_err(py_err)?;
        cfg.seed = seed;
        Ok(Self {
            inner: tinynet::NetModel::new(cfg).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: tinynet::load_model(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        tinynet::save_model(path, &self.inner).map_err(py_err)
    }

    #[getter]
    fn embed_dim(&self) -> usize {
        self.inner.config.embed_dim
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.config.n_classes
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Pooled embedding of a feature matrix given as a list of frames.
    fn embed(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner.embed(&from_rows(features)?).map_err(py_err)
    }

    /// Head logits in inference mode.
    fn logits(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(self.inner.forward(&from_rows(features)?).map_err(py_err)?.1)
    }

    fn predict(&self, features: Vec<Vec<f64>>) -> PyResult<usize> {
        self.inner.predict(&from_rows(features)?).map_err(py_err)
    }

    /// Copy of this model with a freshly initialized head.
    fn swap_head(&self, n_classes: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.swap_head(n_classes, seed).map_err(py_err)?,
        })
    }
}

/// One-vs-rest linear SVM.
#[pyclass(name = "SvmModel", module = "esk")]
struct PySvmModel {
    inner: svm::SvmModel,
}

#[pymethods]
impl PySvmModel {
    #[staticmethod]
    #[pyo3(signature = (x, y, n_classes, c=1.0, standardize=false, seed=0))]
    fn train(x: Vec<Vec<f64>>, y: Vec<usize>, n_classes: usize, c: f64, standardize: bool, seed: u64) -> PyResult<Self> {
        let cfg = SvmConfig {
            c,
            standardize,
            seed,
            ..SvmConfig::default()
        };
        Ok(Self {
            inner: svm::svm_train(&x, &y, n_classes, &cfg).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: svm::load_svm(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        svm::save_svm(path, &self.inner).map_err(py_err)
    }

    /// `(label, decision_values)`.
    fn predict(&self, x: Vec<f64>) -> PyResult<(usize, Vec<f64>)> {
        svm::svm_predict(&self.inner, &x).map_err(py_err)
    }

    #[getter]
    fn weights(&self) -> Vec<Vec<f64>> {
        self.inner.weights.clone()
    }

    #[getter]
    fn bias(&self) -> Vec<f64> {
        self.inner.bias.clone()
    }
}

#[pyfunction]
fn uar(y_true: Vec<usize>, y_pred: Vec<usize>, n_classes: usize) -> PyResult<f64> {
    metrics::uar(&y_true, &y_pred, n_classes).map_err(py_err)
}

fn report_dict<'py>(py: Python<'py>, r: &metrics::EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("uar", r.uar)?;
    d.set_item("macro_precision", r.macro_precision)?;
    d.set_item("macro_f1", r.macro_f1)?;
    d.set_item("confusion", r.confusion.clone())?;
    Ok(d)
}

/// Dict with `uar`, `macro_precision`, `macro_f1` and `confusion`.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, y_true: Vec<usize>, y_pred: Vec<usize>, n_classes: usize) -> PyResult<Bound<'py, PyDict>> {
    report_dict(py, &metrics::evaluate(&y_true, &y_pred, n_classes).map_err(py_err)?)
}

/// Majority vote; without a strict majority the first member wins.
#[pyfunction]
fn late_fuse_vote(predictions: Vec<usize>) -> PyResult<usize> {
    fusion::late_fuse_vote(&predictions).map_err(py_err)
}

/// Runs the cached pipeline from a config file and returns the report dict
/// plus `config_hash` and the list of stages that actually ran.
#[pyfunction]
#[pyo3(signature = (config, output_dir=None))]
fn run_pipeline<'py>(py: Python<'py>, config: PathBuf, output_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = ExperimentConfig::load(config).map_err(py_err)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    let outcome = pipeline::run_pipeline(&cfg).map_err(py_err)?;
    let d = report_dict(py, &outcome.report)?;
    d.set_item("config_hash", outcome.config_hash)?;
    let ran: Vec<&str> = outcome.stages.iter().filter(|s| s.ran).map(|s| s.name).collect();
    d.set_item("ran", ran)?;
    d.set_item("report_path", outcome.report_path)?;
    Ok(d)
}

#[pymodule]
fn esk(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetModel>()?;
    m.add_class::<PySvmModel>()?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(vad_flags, m)?)?;
    m.add_function(wrap_pyfunction!(apply_vad, m)?)?;
    m.add_function(wrap_pyfunction!(mfcc, m)?)?;
    m.add_function(wrap_pyfunction!(logfbank, m)?)?;
    m.add_function(wrap_pyfunction!(uar, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(late_fuse_vote, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
