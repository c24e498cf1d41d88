//! Python bindings: the adaptive normalization layer, the baseline
//! normalizers, the evaluation metrics, and the experiment runners, exposed
//! as the `adanorm_py` module.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use adanorm::config::ConfigBuilder;
use adanorm::error::Error;
use adanorm::eval::{confusion_from_preds, metrics_report, MetricsReport};
use adanorm::experiment::{run_evaluate, run_synth, run_train};
use adanorm::gradcheck::{run_gradcheck, GradcheckSpec};
use adanorm::models::ModelKind;
use adanorm::normalize::{self, DainLayer, DainMode, GlobalStats};
use adanorm::params::ParamStore;
use adanorm::tape::Tape;
use adanorm::tensor::Tensor;

/// Configuration mistakes surface as ValueError, runtime failures as
/// RuntimeError.
fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Parse { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn window_to_tensor(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("window must have at least one row"));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err(
            "window rows must be non-empty and equally sized",
        ));
    }
    let values: Vec<f64> = rows.iter().flatten().copied().collect();
    Tensor::new(vec![rows.len(), d], values).map_err(to_py_err)
}

fn tensor_to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let d = t.cols();
    t.values().chunks(d).map(|c| c.to_vec()).collect()
}

fn report_dict<'py>(py: Python<'py>, rep: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("n", rep.total)?;
    d.set_item("accuracy", rep.accuracy)?;
    d.set_item("precision", rep.precision.clone())?;
    d.set_item("recall", rep.recall.clone())?;
    d.set_item("f1", rep.f1.clone())?;
    d.set_item("macro_precision", rep.macro_precision)?;
    d.set_item("macro_recall", rep.macro_recall)?;
    d.set_item("macro_f1", rep.macro_f1)?;
    d.set_item("kappa", rep.kappa)?;
    d.set_item("kappa_degenerate", rep.kappa_degenerate)?;
    Ok(d)
}

/// Trainable normalization layer at its initial weights: identity centering
/// and scaling matrices plus a near-neutral gate.
#[pyclass]
struct Dain {
    store: ParamStore,
    layer: DainLayer,
}

#[pymethods]
impl Dain {
    #[new]
    #[pyo3(signature = (dim, seed = 0))]
    fn new(dim: usize, seed: u64) -> PyResult<Self> {
        if dim == 0 {
            return Err(PyValueError::new_err("dim must be at least 1"));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = DainLayer::new(&mut store, dim, &mut rng);
        Ok(Dain { store, layer })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.layer.dim()
    }

    /// Applies the selected stages ("shift", "shift_scale", or "full") to a
    /// window given as a list of rows.
    #[pyo3(signature = (window, mode = "full"))]
    fn forward(&self, window: Vec<Vec<f64>>, mode: &str) -> PyResult<Vec<Vec<f64>>> {
        let mode = DainMode::from_label(mode).map_err(to_py_err)?;
        let x = window_to_tensor(&window)?;
        let mut tape = Tape::new();
        let xid = tape.input(x);
        let out = self
            .layer
            .forward(&mut tape, &self.store, xid, mode)
            .map_err(to_py_err)?;
        Ok(tensor_to_rows(tape.value(out)))
    }

    fn param_names(&self) -> Vec<String> {
        self.store.iter().map(|(_, p)| p.name.clone()).collect()
    }

    /// Returns a parameter's (shape, flat values) by name.
    fn param(&self, name: &str) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let id = self
            .store
            .find(name)
            .ok_or_else(|| PyValueError::new_err(format!("no parameter named '{}'", name)))?;
        let t = self.store.value(id);
        Ok((t.shape().to_vec(), t.values().to_vec()))
    }
}

/// Standardizes one window by its own per-feature mean and standard
/// deviation.
#[pyfunction]
fn instance_normalize(window: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let x = window_to_tensor(&window)?;
    let y = normalize::instance_normalize(&x).map_err(to_py_err)?;
    Ok(tensor_to_rows(&y))
}

/// Per-feature mean and population standard deviation over rows.
#[pyfunction]
fn zscore_fit(rows: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("need at least one row"));
    }
    let d = rows[0].len();
    let slices: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let stats = GlobalStats::fit(d, slices.iter().copied()).map_err(to_py_err)?;
    Ok((stats.mu, stats.sigma))
}

/// Standardizes a window by fixed statistics: (x - mu) / max(sigma, 1e-8).
#[pyfunction]
fn zscore_apply(window: Vec<Vec<f64>>, mu: Vec<f64>, sigma: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let x = window_to_tensor(&window)?;
    let stats = GlobalStats { mu, sigma };
    let y = normalize::zscore_normalize(&x, &stats).map_err(to_py_err)?;
    Ok(tensor_to_rows(&y))
}

/// Direction label at index t: 0 up, 1 stationary, 2 down, judged by the
/// mean of the next `horizon` values against a relative threshold.
#[pyfunction]
fn label_midprice(target: Vec<f64>, t: usize, horizon: usize, theta: f64) -> PyResult<usize> {
    adanorm::data::label_midprice(&target, t, horizon, theta).map_err(to_py_err)
}

/// Accuracy, per-class precision/recall/F1, macro averages, and Cohen's
/// kappa from parallel truth/prediction label lists.
#[pyfunction]
fn metrics(
    py: Python<'_>,
    truth: Vec<usize>,
    pred: Vec<usize>,
    n_classes: usize,
) -> PyResult<Py<PyDict>> {
    let cm = confusion_from_preds(&truth, &pred, n_classes).map_err(to_py_err)?;
    let rep = metrics_report(&cm).map_err(to_py_err)?;
    Ok(report_dict(py, &rep)?.unbind())
}

/// Compares analytic gradients against central finite differences for one
/// model ("mlp", "cnn", "gru") and normalization mode.
#[pyfunction]
#[pyo3(signature = (model = "mlp", mode = "full", seed = 1))]
fn gradcheck(py: Python<'_>, model: &str, mode: &str, seed: u64) -> PyResult<Py<PyDict>> {
    let spec = GradcheckSpec::new(
        ModelKind::from_label(model).map_err(to_py_err)?,
        DainMode::from_label(mode).map_err(to_py_err)?,
        seed,
    );
    let rep = run_gradcheck(&spec).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("model", model)?;
    d.set_item("mode", mode)?;
    d.set_item("max_rel_err", rep.max_rel_err)?;
    d.set_item("input_err", rep.input_err)?;
    d.set_item("tol", rep.tol)?;
    d.set_item("passed", rep.passed())?;
    Ok(d.unbind())
}

/// Trains per an INI config string (same format as the CLI), writes the
/// usual artifacts under the configured output dir, and returns fold and
/// aggregate metrics.
#[pyfunction]
fn run_experiment(py: Python<'_>, ini: &str) -> PyResult<Py<PyDict>> {
    let mut b = ConfigBuilder::new();
    b.apply_ini_text(ini).map_err(to_py_err)?;
    let cfg = b.resolve().map_err(to_py_err)?;
    let summary = run_train(&cfg).map_err(to_py_err)?;

    let folds = PyList::empty(py);
    for f in &summary.folds {
        let d = report_dict(py, &f.test)?;
        d.set_item("fold", f.fold)?;
        d.set_item("seed", f.seed)?;
        d.set_item("n_train", f.n_train)?;
        d.set_item("n_test", f.n_test)?;
        folds.append(d)?;
    }
    let out = PyDict::new(py);
    out.set_item("folds", folds)?;
    out.set_item("accuracy_mean", summary.accuracy.mean)?;
    out.set_item("accuracy_std", summary.accuracy.std)?;
    out.set_item("macro_f1_mean", summary.macro_f1.mean)?;
    out.set_item("macro_f1_std", summary.macro_f1.std)?;
    out.set_item("kappa_mean", summary.kappa.mean)?;
    out.set_item("kappa_std", summary.kappa.std)?;
    out.set_item("output_dir", cfg.output_dir.display().to_string())?;
    Ok(out.unbind())
}

/// Evaluates a training checkpoint on its fold's test split; pass `shift`
/// to also score under the mean-shift corruption.
#[pyfunction]
#[pyo3(signature = (ini, checkpoint, shift = None))]
fn evaluate_checkpoint(
    py: Python<'_>,
    ini: &str,
    checkpoint: PathBuf,
    shift: Option<f64>,
) -> PyResult<Py<PyDict>> {
    let mut b = ConfigBuilder::new();
    b.apply_ini_text(ini).map_err(to_py_err)?;
    let cfg = b.resolve().map_err(to_py_err)?;
    let outcome =
        run_evaluate(&cfg, &checkpoint, shift.map(|m| (m, Vec::new()))).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("fold", outcome.fold)?;
    d.set_item("clean", report_dict(py, &outcome.clean)?)?;
    match &outcome.shifted {
        Some(rep) => d.set_item("shifted", report_dict(py, rep)?)?,
        None => d.set_item("shifted", py.None())?,
    }
    Ok(d.unbind())
}

/// Generates the synthetic two-regime dataset as CSV files plus an INI
/// snippet describing them; returns the written paths.
#[pyfunction]
#[pyo3(signature = (outdir, rows_per_day = None, seed = 7, shift_mult = None))]
fn synth_dataset(
    outdir: PathBuf,
    rows_per_day: Option<usize>,
    seed: u64,
    shift_mult: Option<f64>,
) -> PyResult<Vec<String>> {
    let mut b = ConfigBuilder::new();
    b.set("dataset.source", "synthetic").map_err(to_py_err)?;
    b.set("training.seed", seed.to_string()).map_err(to_py_err)?;
    b.set("output.dir", outdir.display().to_string())
        .map_err(to_py_err)?;
    if let Some(r) = rows_per_day {
        b.set("dataset.rows_per_day", r.to_string()).map_err(to_py_err)?;
    }
    if let Some(m) = shift_mult {
        b.set("dataset.shift_mult", m.to_string()).map_err(to_py_err)?;
    }
    let cfg = b.resolve().map_err(to_py_err)?;
    let files = run_synth(&cfg).map_err(to_py_err)?;
    Ok(files.iter().map(|p| p.display().to_string()).collect())
}

#[pymodule]
fn adanorm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Dain>()?;
    m.add_function(wrap_pyfunction!(instance_normalize, m)?)?;
    m.add_function(wrap_pyfunction!(zscore_fit, m)?)?;
    m.add_function(wrap_pyfunction!(zscore_apply, m)?)?;
    m.add_function(wrap_pyfunction!(label_midprice, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_checkpoint, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    Ok(())
}
