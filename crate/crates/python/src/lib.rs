use std::path::PathBuf;

use latentaug_core::data::{ImageBuffer, ToySpec};
use latentaug_core::eval::MetricsRow;
use latentaug_core::pipeline::{self, RunConfig};
use latentaug_core::{classifier, vae, ClassifierModel, Tensor, VaeModel};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::{Map, Value};

type Rows = Vec<Vec<f64>>;

fn to_py(e: latentaug_core::Error) -> PyErr {
    use latentaug_core::Error as E;
    let root = match &e {
        E::Stage { source, .. } => source.as_ref(),
        other => other,
    };
    match root {
        E::Io { .. } => PyOSError::new_err(e.to_string()),
        E::Dimension(_) | E::Domain(_) | E::Contract(_) | E::Parse { .. } | E::Version { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn dict_to_map(py: Python<'_>, dict: Option<&Bound<'_, PyDict>>) -> PyResult<Map<String, Value>> {
    let Some(dict) = dict else {
        return Ok(Map::new());
    };
    let text: String = py
        .import("json")?
        .call_method1("dumps", (dict,))?
        .extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows_to_py<'py>(py: Python<'py>, rows: &[MetricsRow]) -> PyResult<Bound<'py, PyList>> {
    let out = PyList::empty(py);
    for r in rows {
        let d = PyDict::new(py);
        d.set_item("config", &r.config)?;
        d.set_item("overall_acc", r.overall_acc)?;
        d.set_item("overall_prec", r.overall_prec)?;
        d.set_item("overall_rec", r.overall_rec)?;
        d.set_item("overall_f1", r.overall_f1)?;
        d.set_item("class_acc", r.class_acc.clone())?;
        out.append(d)?;
    }
    Ok(out)
}

/// Resolved run configuration; keys mirror the JSON config file.
#[pyclass(name = "RunConfig", module = "latentaug", frozen)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (overrides=None))]
    fn new(py: Python<'_>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let cli = dict_to_map(py, overrides)?;
        let inner = RunConfig::resolve(None, &cli).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::load(&path).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn data_root(&self) -> PathBuf {
        self.inner.data_root.clone()
    }

    #[getter]
    fn out_dir(&self) -> PathBuf {
        self.inner.out_dir.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(seed={}, data_root={:?}, out_dir={:?})",
            self.inner.seed, self.inner.data_root, self.inner.out_dir
        )
    }
}

/// Trained per-class VAE loaded from a checkpoint.
#[pyclass(name = "VaeModel", module = "latentaug", frozen)]
struct PyVaeModel {
    inner: VaeModel,
}

#[pymethods]
impl PyVaeModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: vae::load_checkpoint(&path).map_err(to_py)?,
        })
    }

    #[getter]
    fn class_label(&self) -> usize {
        self.inner.class_label
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim
    }

    /// Flattened pixel count of one input image.
    #[getter]
    fn pixels(&self) -> usize {
        self.inner.geometry.pixels()
    }

    /// Latent means and log-variances for a batch of flattened images in `[0, 1]`.
    fn encode(&self, images: Rows) -> PyResult<(Rows, Rows)> {
        let x = Tensor::from_rows(&images).map_err(to_py)?;
        let (mu, logvar) = self.inner.encode(&x).map_err(to_py)?;
        Ok((split_rows(&mu), split_rows(&logvar)))
    }

    /// Decoded images for a batch of latent vectors.
    fn decode(&self, latents: Rows) -> PyResult<Rows> {
        let z = Tensor::from_rows(&latents).map_err(to_py)?;
        Ok(split_rows(&self.inner.decode(&z).map_err(to_py)?))
    }
}

fn split_rows(t: &Tensor) -> Rows {
    (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
}

/// Trained classifier loaded from a checkpoint.
#[pyclass(name = "ClassifierModel", module = "latentaug", frozen)]
struct PyClassifierModel {
    inner: ClassifierModel,
}

#[pymethods]
impl PyClassifierModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: classifier::load_checkpoint(&path).map_err(to_py)?,
        })
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    /// Class probabilities for a batch of flattened images in `[0, 1]`.
    fn predict(&self, images: Rows) -> PyResult<Rows> {
        let g = self.inner.geometry;
        let buffers = images
            .into_iter()
            .map(|p| ImageBuffer::new(g.width, g.height, g.channels, p))
            .collect::<latentaug_core::Result<Vec<_>>>()
            .map_err(to_py)?;
        Ok(split_rows(&self.inner.predict(&buffers).map_err(to_py)?))
    }
}

/// Convex combination `alpha * z1 + (1 - alpha) * z2`.
#[pyfunction]
fn interpolate(z1: Vec<f64>, z2: Vec<f64>, alpha: f64) -> PyResult<Vec<f64>> {
    latentaug_core::interpolate(&z1, &z2, alpha).map_err(to_py)
}

/// Writes the toy grating dataset; returns images per class.
#[pyfunction]
#[pyo3(signature = (root, counts=None, seed=42, force=false))]
fn gen_toy(
    root: PathBuf,
    counts: Option<Vec<usize>>,
    seed: u64,
    force: bool,
) -> PyResult<Vec<usize>> {
    let mut spec = ToySpec {
        seed,
        ..ToySpec::default()
    };
    if let Some(c) = counts {
        spec.counts = c;
    }
    let m = pipeline::gen_toy(&spec, &root, force).map_err(to_py)?;
    Ok(m.class_counts(|_| true))
}

#[pyfunction]
fn split(config: &PyRunConfig) -> PyResult<()> {
    pipeline::split(&config.inner).map(|_| ()).map_err(to_py)
}

/// Trains one VAE per class; returns per-class total-loss histories.
#[pyfunction]
fn train_vaes(config: &PyRunConfig) -> PyResult<Rows> {
    let h = pipeline::train_vaes(&config.inner).map_err(to_py)?;
    Ok(h.iter()
        .map(|c| c.iter().map(|l| l.total).collect())
        .collect())
}

/// Decodes synthetic images; returns synthetic images per class.
#[pyfunction]
fn generate(config: &PyRunConfig) -> PyResult<Vec<usize>> {
    let m = pipeline::generate(&config.inner).map_err(to_py)?;
    Ok(m.class_counts(|r| r.provenance == latentaug_core::data::Provenance::Synthetic))
}

/// Trains one classifier; returns its validation-loss history.
#[pyfunction]
#[pyo3(signature = (config, name, with_synthetic=false, classical=false))]
fn train_clf(
    config: &PyRunConfig,
    name: &str,
    with_synthetic: bool,
    classical: bool,
) -> PyResult<Vec<f64>> {
    let (_, h) =
        pipeline::train_clf(&config.inner, name, with_synthetic, classical).map_err(to_py)?;
    Ok(h.iter().map(|e| e.val_loss).collect())
}

#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    config: &PyRunConfig,
    names: Vec<String>,
) -> PyResult<Bound<'py, PyList>> {
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let rows = pipeline::evaluate(&config.inner, &refs).map_err(to_py)?;
    rows_to_py(py, &rows)
}

/// Full four-configuration comparison; returns the metrics rows.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: &PyRunConfig) -> PyResult<Bound<'py, PyList>> {
    let summary = pipeline::run_experiment(&config.inner).map_err(to_py)?;
    rows_to_py(py, &summary.rows)
}

#[pymodule]
fn latentaug(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyVaeModel>()?;
    m.add_class::<PyClassifierModel>()?;
    m.add_function(wrap_pyfunction!(interpolate, m)?)?;
    m.add_function(wrap_pyfunction!(gen_toy, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(train_vaes, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train_clf, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
