//! Python bindings. Structured results cross the boundary as JSON and come
//! out as plain dicts and lists.

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Mutex;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use prefemo::algorithms::{self, AlgorithmKind, AlgorithmSpec};
use prefemo::harness::{self, ExperimentConfig, ProblemConfig, ResultStore};
use prefemo::metrics::{self, MetricId};
use prefemo::pareto;
use prefemo::problems::{self, Family, ProblemSpec};
use prefemo::scalarize::{self, ReferencePoint};
use prefemo::steer::{self, SessionConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn reference(z: Vec<f64>, weights: Option<Vec<f64>>) -> PyResult<ReferencePoint> {
    match weights {
        Some(w) => ReferencePoint::with_weights(z, w),
        None => ReferencePoint::new(z),
    }
    .map_err(value_err)
}

fn problem(family: &str, m: Option<usize>, n: Option<usize>) -> PyResult<ProblemSpec> {
    ProblemSpec::new(Family::from_str(family).map_err(value_err)?, m, n).map_err(value_err)
}

/// Evaluates a benchmark problem at `x`.
#[pyfunction]
#[pyo3(signature = (family, x, m=None))]
fn evaluate(family: &str, x: Vec<f64>, m: Option<usize>) -> PyResult<Vec<f64>> {
    let spec = problem(family, m, Some(x.len()))?;
    Ok(problems::evaluate(&spec, &x).map_err(value_err)?.into_inner())
}

#[pyfunction]
#[pyo3(signature = (family, count, m=None))]
fn sample_true_front(family: &str, count: usize, m: Option<usize>) -> PyResult<Vec<Vec<f64>>> {
    let spec = problem(family, m, None)?;
    Ok(problems::sample_true_front(&spec, count).map_err(value_err)?.into_iter().map(|v| v.into_inner()).collect())
}

#[pyfunction]
fn dominates(a: Vec<f64>, b: Vec<f64>) -> bool {
    pareto::dominates(&a, &b)
}

/// Non-dominated fronts as lists of indices, best first.
#[pyfunction]
fn nondominated_sort(points: Vec<Vec<f64>>) -> Vec<Vec<usize>> {
    pareto::fast_nondominated_sort(&points)
}

#[pyfunction]
fn crowding_distance(points: Vec<Vec<f64>>) -> Vec<f64> {
    pareto::crowding_distance(&points)
}

#[pyfunction]
fn tchebycheff(f: Vec<f64>, w: Vec<f64>, z_star: Vec<f64>) -> f64 {
    scalarize::tchebycheff(&f, &w, &z_star)
}

#[pyfunction]
#[pyo3(signature = (f, z, w, rho_aug=1e-4))]
fn augmented_asf(f: Vec<f64>, z: Vec<f64>, w: Vec<f64>, rho_aug: f64) -> f64 {
    scalarize::augmented_asf(&f, &z, &w, rho_aug)
}

#[pyfunction]
fn g_flag(f: Vec<f64>, z: Vec<f64>) -> u8 {
    scalarize::g_flag(&f, &z)
}

#[pyfunction]
fn das_dennis(m: usize, divisions: usize) -> PyResult<Vec<Vec<f64>>> {
    Ok(scalarize::das_dennis(m, divisions).map_err(value_err)?.vectors.into_iter().map(|w| w.to_vec()).collect())
}

#[pyfunction]
#[pyo3(signature = (points, z, weights=None))]
fn ep_accuracy(points: Vec<Vec<f64>>, z: Vec<f64>, weights: Option<Vec<f64>>) -> PyResult<f64> {
    metrics::ep_accuracy(&points, &reference(z, weights)?).map_err(value_err)
}

#[pyfunction]
fn igd(points: Vec<Vec<f64>>, samples: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::igd(&points, &samples).map_err(value_err)
}

#[pyfunction]
fn hypervolume(points: Vec<Vec<f64>>, reference_point: Vec<f64>) -> f64 {
    metrics::hypervolume(&points, &reference_point)
}

#[pyfunction]
#[pyo3(signature = (points, z, worst, samples, delta_extent=metrics::DEFAULT_DELTA_EXTENT))]
fn r_igd(points: Vec<Vec<f64>>, z: Vec<f64>, worst: Vec<f64>, samples: Vec<Vec<f64>>, delta_extent: f64) -> PyResult<f64> {
    metrics::r_igd(&points, &reference(z, None)?, delta_extent, &worst, &samples).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (points, z, worst, delta_extent=metrics::DEFAULT_DELTA_EXTENT))]
fn r_hv(points: Vec<Vec<f64>>, z: Vec<f64>, worst: Vec<f64>, delta_extent: f64) -> PyResult<f64> {
    metrics::r_hv(&points, &reference(z, None)?, delta_extent, &worst).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (a, b, alpha=0.05))]
fn wilcoxon<'py>(py: Python<'py>, a: Vec<f64>, b: Vec<f64>, alpha: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &metrics::wilcoxon_signed_rank(&a, &b, alpha).map_err(value_err)?)
}

/// Runs one algorithm on a benchmark problem; returns the run as a dict.
#[pyfunction]
#[pyo3(signature = (algorithm, family, population_size, budget, seed=0, reference_points=None, m=None))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    algorithm: &str,
    family: &str,
    population_size: usize,
    budget: usize,
    seed: u64,
    reference_points: Option<Vec<Vec<f64>>>,
    m: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let kind = AlgorithmKind::from_str(algorithm).map_err(value_err)?;
    let refs = reference_points.unwrap_or_default().into_iter().map(|z| reference(z, None)).collect::<PyResult<Vec<_>>>()?;
    let spec = AlgorithmSpec::new(kind, population_size).with_reference_points(refs);
    let problem = ProblemConfig::benchmark(Family::from_str(family).map_err(value_err)?, m).build().map_err(value_err)?;
    let result = py.detach(|| algorithms::run(spec, problem, budget, seed, |_| {})).map_err(value_err)?;
    to_py(py, &result)
}

#[pyfunction]
fn presets() -> Vec<String> {
    harness::scenario_presets().into_iter().map(|p| p.name).collect()
}

#[pyfunction]
fn preset<'py>(py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &harness::preset(name).map_err(value_err)?.config)
}

/// Runs an experiment given as a JSON string; returns the run report.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir, jobs=1, resume=false))]
fn run_experiment<'py>(py: Python<'py>, config_json: &str, out_dir: PathBuf, jobs: usize, resume: bool) -> PyResult<Bound<'py, PyAny>> {
    let config: ExperimentConfig = serde_json::from_str(config_json).map_err(value_err)?;
    let (_, report) = py.detach(|| harness::run_experiment(&config, &out_dir, jobs, resume)).map_err(value_err)?;
    to_py(py, &report)
}

#[pyfunction]
fn summarize<'py>(py: Python<'py>, store: PathBuf, metric: &str) -> PyResult<Bound<'py, PyAny>> {
    let store = ResultStore::open(&store).map_err(value_err)?;
    let metric = MetricId::from_str(metric).map_err(value_err)?;
    to_py(py, &harness::summarize(&store, metric).map_err(value_err)?)
}

/// An interactive steering session driven from Python.
#[pyclass(module = "prefemo_py")]
struct Session {
    inner: Mutex<steer::Session>,
}

impl Session {
    fn with<T>(&self, f: impl FnOnce(&mut steer::Session) -> Result<T, steer::SteerError>) -> PyResult<T> {
        let mut guard = self.inner.lock().map_err(|_| PyRuntimeError::new_err("session lock poisoned"))?;
        f(&mut guard).map_err(value_err)
    }
}

#[pymethods]
impl Session {
    /// Creates a session from a JSON `SessionConfig`.
    #[new]
    #[pyo3(signature = (config_json, id="py"))]
    fn new(config_json: &str, id: &str) -> PyResult<Self> {
        let config: SessionConfig = serde_json::from_str(config_json).map_err(value_err)?;
        Ok(Self { inner: Mutex::new(steer::Session::new(id, config).map_err(value_err)?) })
    }

    /// The portfolio preset with `objectives` 3 or 5.
    #[staticmethod]
    #[pyo3(signature = (objectives=3, algorithm="moead-nums", seed=0, budget=None, interaction_period=None))]
    fn portfolio(objectives: usize, algorithm: &str, seed: u64, budget: Option<usize>, interaction_period: Option<usize>) -> PyResult<Self> {
        let kind = AlgorithmKind::from_str(algorithm).map_err(value_err)?;
        let mut config = SessionConfig::portfolio_preset(objectives, kind, seed).map_err(value_err)?;
        if let Some(b) = budget {
            config.budget = b;
        }
        config.interaction_period = interaction_period.or(config.interaction_period);
        Ok(Self { inner: Mutex::new(steer::Session::new("py", config).map_err(value_err)?) })
    }

    fn advance<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let snap = py.detach(|| self.with(|s| s.advance()))?;
        to_py(py, &snap)
    }

    fn elicit<'py>(&self, py: Python<'py>, z: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        let snap = self.with(|s| s.elicit(z))?;
        to_py(py, &snap)
    }

    #[getter]
    fn phase(&self) -> PyResult<String> {
        self.with(|s| Ok(s.phase().to_string()))
    }

    fn state<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let state = self.with(|s| Ok(s.state()))?;
        to_py(py, &state)
    }
}

#[pymodule]
fn prefemo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(sample_true_front, m)?)?;
    m.add_function(wrap_pyfunction!(dominates, m)?)?;
    m.add_function(wrap_pyfunction!(nondominated_sort, m)?)?;
    m.add_function(wrap_pyfunction!(crowding_distance, m)?)?;
    m.add_function(wrap_pyfunction!(tchebycheff, m)?)?;
    m.add_function(wrap_pyfunction!(augmented_asf, m)?)?;
    m.add_function(wrap_pyfunction!(g_flag, m)?)?;
    m.add_function(wrap_pyfunction!(das_dennis, m)?)?;
    m.add_function(wrap_pyfunction!(ep_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(igd, m)?)?;
    m.add_function(wrap_pyfunction!(hypervolume, m)?)?;
    m.add_function(wrap_pyfunction!(r_igd, m)?)?;
    m.add_function(wrap_pyfunction!(r_hv, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_class::<Session>()?;
    Ok(())
}
