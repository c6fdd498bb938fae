//! Python bindings: configs, training runs, saved networks and the reference solvers.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mfpinn::harness::{self, Approach};
use mfpinn::network::{Fidelity, MultiFidelityNet};
use mfpinn::problems::Hydraulic;
use mfpinn::refsolvers::bvp_solve_hydraulic;
use mfpinn::{Error, Precision};

fn py_err(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    match e {
        Error::Io { .. } => PyIOError::new_err(msg),
        Error::Config(_) | Error::Json(_) | Error::Dataset { .. } | Error::Shape(_) | Error::Domain(_) => {
            PyValueError::new_err(msg)
        }
        _ => PyRuntimeError::new_err(msg),
    }
}

fn fidelity(name: &str) -> PyResult<Fidelity> {
    match name {
        "high" => Ok(Fidelity::High),
        "low" => Ok(Fidelity::Low),
        other => Err(PyValueError::new_err(format!("fidelity must be `low` or `high`, got `{other}`"))),
    }
}

/// Experiment configuration.
#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: harness::RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Ok(PyRunConfig {
            inner: harness::RunConfig::preset(name).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyRunConfig {
            inner: harness::RunConfig::from_json(text).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyRunConfig {
            inner: harness::RunConfig::load(path).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[getter]
    fn problem(&self) -> &'static str {
        self.inner.problem.name()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn approach(&self) -> &'static str {
        self.inner.approach.name()
    }

    #[setter]
    fn set_approach(&mut self, name: &str) -> PyResult<()> {
        self.inner.approach = name.parse::<Approach>().map_err(py_err)?;
        Ok(())
    }

    #[getter]
    fn residual_points(&self) -> usize {
        self.inner.data.residual_points
    }

    #[setter]
    fn set_residual_points(&mut self, n: usize) {
        self.inner.data.residual_points = n;
    }

    /// Sets the Adam and L-BFGS iteration counts.
    fn set_budget(&mut self, adam_iters: usize, lbfgs_iters: usize) {
        self.inner.schedule.adam_iters = adam_iters;
        self.inner.schedule.lbfgs_iters = lbfgs_iters;
    }

    /// Copy with both iteration counts multiplied by `scale`.
    fn scaled(&self, scale: f64) -> PyResult<Self> {
        Ok(PyRunConfig {
            inner: self.inner.clone().scaled(scale).map_err(py_err)?,
        })
    }

    fn set_precision(&mut self, name: &str) -> PyResult<()> {
        self.inner.schedule.precision = match name {
            "f32" => Precision::F32,
            "f64" => Precision::F64,
            other => return Err(PyValueError::new_err(format!("unknown precision `{other}`"))),
        };
        Ok(())
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(problem={:?}, approach={:?}, seed={})",
            self.inner.problem.name(),
            self.inner.approach.name(),
            self.inner.seed
        )
    }
}

/// A trained (or loaded) multi-fidelity network.
#[pyclass(name = "Network")]
struct PyNetwork {
    inner: MultiFidelityNet,
}

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: MultiFidelityNet::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[pyo3(signature = (points, fidelity="high"))]
    fn predict(&self, points: Vec<Vec<f64>>, fidelity: &str) -> PyResult<Vec<Vec<f64>>> {
        self.inner.predict(&points, self::fidelity(fidelity)?).map_err(py_err)
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }
}

/// Outcome of `train`.
#[pyclass(name = "RunResult")]
struct PyRunResult {
    #[pyo3(get)]
    relative_l2: BTreeMap<String, f64>,
    #[pyo3(get)]
    parameters: BTreeMap<String, f64>,
    #[pyo3(get)]
    final_loss: f64,
    #[pyo3(get)]
    terms: Vec<String>,
    net: MultiFidelityNet,
}

#[pymethods]
impl PyRunResult {
    fn network(&self) -> PyNetwork {
        PyNetwork { inner: self.net.clone() }
    }

    fn __repr__(&self) -> String {
        format!("RunResult(relative_l2={:?}, parameters={:?})", self.relative_l2, self.parameters)
    }
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    harness::RunConfig::preset_names().collect()
}

/// Trains one model; artifacts go to `out_dir` when given.
#[pyfunction]
#[pyo3(signature = (config, out_dir=None))]
fn train(py: Python<'_>, config: &PyRunConfig, out_dir: Option<PathBuf>) -> PyResult<PyRunResult> {
    let cfg = config.inner.clone();
    let r = py
        .detach(move || harness::run(&cfg, out_dir.as_deref()))
        .map_err(py_err)?;
    Ok(PyRunResult {
        relative_l2: r.report.relative_l2.clone(),
        parameters: r.report.parameters.iter().map(|p| (p.name.clone(), p.value)).collect(),
        final_loss: r.final_loss,
        terms: r.terms.clone(),
        net: r.net,
    })
}

/// Runs the data generator and writes `dataset.csv`; returns its path.
#[pyfunction]
fn generate_data(config: &PyRunConfig, out_dir: PathBuf) -> PyResult<PathBuf> {
    let data = harness::load_data(&config.inner).map_err(py_err)?;
    harness::save_data(&data, &out_dir).map_err(py_err)
}

/// Repeats an inverse run over `runs` seeds; returns the summary as JSON.
#[pyfunction]
#[pyo3(signature = (config, runs, out_dir=None))]
fn infer(py: Python<'_>, config: &PyRunConfig, runs: usize, out_dir: Option<PathBuf>) -> PyResult<String> {
    let cfg = config.inner.clone();
    let s = py
        .detach(move || harness::infer(&cfg, runs, out_dir.as_deref()))
        .map_err(py_err)?;
    serde_json::to_string(&s).map_err(|e| py_err(e.into()))
}

#[pyfunction]
fn relative_l2(predictions: Vec<Vec<f64>>, truths: Vec<Vec<f64>>) -> PyResult<f64> {
    mfpinn::problems::relative_l2(&predictions, &truths).map_err(py_err)
}

/// Steady head profile on the benchmark column; returns `(x, h, mean_flux)`.
#[pyfunction]
#[pyo3(signature = (alpha, m, dx=8.0))]
fn solve_hydraulic(alpha: f64, m: f64, dx: f64) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let h = Hydraulic::new(mfpinn::problems::HydraulicForm::Differential);
    let s = bvp_solve_hydraulic(alpha, m, h.h0, h.h1, h.length, dx).map_err(py_err)?;
    let x = s.field.axes[0].clone();
    let v = s.field.values.iter().map(|v| v[0]).collect();
    Ok((x, v, s.mean_flux()))
}

#[pymodule]
#[pyo3(name = "mfpinn")]
fn mfpinn_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(generate_data, m)?)?;
    m.add_function(wrap_pyfunction!(infer, m)?)?;
    m.add_function(wrap_pyfunction!(relative_l2, m)?)?;
    m.add_function(wrap_pyfunction!(solve_hydraulic, m)?)?;
    Ok(())
}
