//! Python bindings for `em_lab`.
//!
//! Structured inputs (models, fits, run configs) cross the boundary as JSON
//! strings in the same schema the CLI reads; results come back as Python
//! objects decoded from JSON.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use em_lab::harness::{self, ExperimentConfig};
use em_lab::{em_population, fixedpoint, metrics, models, theory};
use em_lab::{ErrorClass, FitSpec, TrueModel};

fn to_py(e: em_lab::Error) -> PyErr {
    let msg = e.to_string();
    match e.class() {
        ErrorClass::Config => PyValueError::new_err(msg),
        ErrorClass::Numeric => PyArithmeticError::new_err(msg),
        ErrorClass::Io => PyOSError::new_err(msg),
    }
}

fn parse<T: for<'de> serde::Deserialize<'de>>(json: &str) -> PyResult<T> {
    serde_json::from_str(json).map_err(|e| PyValueError::new_err(format!("json: {e}")))
}

/// Serializes `value` and decodes it with Python's `json` module.
fn to_object<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A sample of points (or covariate/response pairs).
#[pyclass(name = "Dataset", module = "em_lab_py", frozen)]
struct PyDataset {
    inner: models::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Row-major points of dimension `d`.
    #[new]
    fn new(d: usize, points: Vec<f64>) -> PyResult<Self> {
        let inner = models::Dataset::from_points(d, points).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// `n` draws from the model described by `truth_json`, on the stream of
    /// `(seed, trial)`.
    #[staticmethod]
    #[pyo3(signature = (truth_json, n, seed, trial = 0))]
    fn sample(truth_json: &str, n: usize, seed: u64, trial: u64) -> PyResult<Self> {
        let truth: TrueModel = parse(truth_json)?;
        let mut stream = models::derive_stream(seed, trial);
        let inner = models::sample(&truth, n, &mut stream).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn points(&self) -> Vec<f64> {
        self.inner.points().to_vec()
    }

    fn responses(&self) -> Option<Vec<f64>> {
        self.inner.responses().map(<[f64]>::to_vec)
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, d={})", self.inner.n(), self.inner.dim())
    }
}

/// Discrete measure `Σ wᵢ δ_{xᵢ}` on component locations.
#[pyclass(name = "MixingMeasure", module = "em_lab_py", frozen)]
struct PyMixingMeasure {
    inner: metrics::MixingMeasure,
}

#[pymethods]
impl PyMixingMeasure {
    #[new]
    fn new(atoms: Vec<(f64, Vec<f64>)>) -> PyResult<Self> {
        let inner = metrics::MixingMeasure::new(atoms).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn atoms(&self) -> Vec<(f64, Vec<f64>)> {
        self.inner.atoms().to_vec()
    }

    /// Exact Wasserstein-2 distance to `other`.
    fn wasserstein2(&self, other: &PyMixingMeasure) -> PyResult<f64> {
        metrics::wasserstein2(&self.inner, &other.inner).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("MixingMeasure({:?})", self.inner.atoms())
    }
}

#[pyfunction]
#[pyo3(signature = (theta, pi = 0.5, sigma = 1.0))]
fn pop_em_symmetric(theta: Vec<f64>, pi: f64, sigma: f64) -> PyResult<Vec<f64>> {
    em_population::pop_em_symmetric(&theta, pi, sigma).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (theta, pi, sigma = 1.0))]
fn pop_em_unknown_weight(theta: Vec<f64>, pi: f64, sigma: f64) -> PyResult<(f64, Vec<f64>)> {
    em_population::pop_em_unknown_weight(&theta, pi, sigma).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (theta, sigma = 1.0))]
fn pop_em_regression(theta: Vec<f64>, sigma: f64) -> PyResult<Vec<f64>> {
    em_population::pop_em_regression(&theta, sigma).map_err(to_py)
}

/// One sample-EM update of the fit in `fit_json`; returns the new
/// parameters as a dict.
#[pyfunction]
fn sample_em_step<'py>(
    py: Python<'py>,
    fit_json: &str,
    params_json: &str,
    data: &PyDataset,
) -> PyResult<Bound<'py, PyAny>> {
    let fit: FitSpec = parse(fit_json)?;
    let state: em_lab::ParamState = parse(params_json)?;
    let op = em_lab::em_sample::StepOperator::new(&fit, &data.inner).map_err(to_py)?;
    let next = op.apply(&state).map_err(to_py)?;
    to_object(py, &next)
}

/// Full EM run; `em_json` is an `EmRunConfig` (defaults when omitted).
#[pyfunction]
#[pyo3(signature = (fit_json, data, seed, em_json = None))]
fn run_em<'py>(
    py: Python<'py>,
    fit_json: &str,
    data: &PyDataset,
    seed: u64,
    em_json: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let fit: FitSpec = parse(fit_json)?;
    let cfg: em_lab::EmRunConfig = match em_json {
        Some(s) => parse(s)?,
        None => Default::default(),
    };
    let mut stream = models::derive_stream(seed, 0);
    let res = py
        .detach(|| em_lab::run_em(&fit, &data.inner, &cfg, &mut stream))
        .map_err(to_py)?;
    to_object(py, &res)
}

#[pyfunction]
#[pyo3(signature = (data, sigma = 1.0))]
fn find_nonzero_fixed_points(data: &PyDataset, sigma: f64) -> PyResult<Vec<f64>> {
    fixedpoint::find_nonzero_fixed_points(&data.inner, sigma).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (theta_norm, sigma = 1.0))]
fn gamma_up(theta_norm: f64, sigma: f64) -> PyResult<f64> {
    theory::gamma_up(theta_norm, sigma).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (theta_norm, sigma = 1.0))]
fn gamma_low(theta_norm: f64, sigma: f64) -> PyResult<f64> {
    theory::gamma_low(theta_norm, sigma).map_err(to_py)
}

#[pyfunction]
fn alpha_sequence(steps: usize) -> PyResult<Vec<f64>> {
    theory::alpha_sequence(steps).map_err(to_py)
}

#[pyfunction]
fn fisher_beta(pi: f64) -> PyResult<f64> {
    theory::fisher_beta(pi).map_err(to_py)
}

/// Preset experiment configs of a scenario, as a JSON array string.
#[pyfunction]
fn scenario_preset(id: &str, seed: u64) -> PyResult<String> {
    let configs = harness::scenario_preset(id, seed).map_err(to_py)?;
    serde_json::to_string(&configs).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Runs one experiment config; returns the rate table as a dict with
/// `rows`, `slopes` and `trials`.
#[pyfunction]
#[pyo3(signature = (config_json, workers = None))]
fn run_scenario<'py>(
    py: Python<'py>,
    config_json: &str,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg: ExperimentConfig = parse(config_json)?;
    let table = py
        .detach(|| harness::with_workers(workers, || harness::run_scenario(&cfg)))
        .map_err(to_py)?
        .map_err(to_py)?;
    to_object(py, &table)
}

#[pymodule]
fn em_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyMixingMeasure>()?;
    m.add_function(wrap_pyfunction!(pop_em_symmetric, m)?)?;
    m.add_function(wrap_pyfunction!(pop_em_unknown_weight, m)?)?;
    m.add_function(wrap_pyfunction!(pop_em_regression, m)?)?;
    m.add_function(wrap_pyfunction!(sample_em_step, m)?)?;
    m.add_function(wrap_pyfunction!(run_em, m)?)?;
    m.add_function(wrap_pyfunction!(find_nonzero_fixed_points, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_up, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_low, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(fisher_beta, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_preset, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add("SCENARIO_IDS", harness::SCENARIO_IDS.to_vec())?;
    Ok(())
}
