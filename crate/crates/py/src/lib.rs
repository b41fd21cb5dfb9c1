use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

use fundsim_core::analytics::{self, Point2, StockContext};
use fundsim_core::run::{self, RunOptions};
use fundsim_core::{expectation, Error};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Domain(_) | Error::Validation(_) | Error::MissingRow { .. } => PyValueError::new_err(err.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json_to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let json = PyModule::import(py, "json")?;
    Ok(json.call_method1("loads", (text,))?.unbind())
}

fn point(y: f64, d_y: f64) -> PyResult<Point2> {
    Point2::new(y, d_y).map_err(to_py)
}

#[pyfunction]
fn phi(x: f64, y: f64) -> PyResult<f64> {
    analytics::phi(x, y).map_err(to_py)
}

#[pyfunction]
fn g_fn(y: f64, d_y: f64, b_k: f64, f_next: f64) -> PyResult<f64> {
    analytics::g_fn(point(y, d_y)?, b_k, f_next).map_err(to_py)
}

#[pyfunction]
fn f_increment(y: f64, d_y: f64, a_k: f64, b_k: f64, f_now: f64, f_next: f64) -> PyResult<f64> {
    let ctx = StockContext::new(a_k, b_k, f_now, f_next).map_err(to_py)?;
    analytics::f_increment(point(y, d_y)?, &ctx).map_err(to_py)
}

#[pyfunction]
fn h_fn(y: f64, d_y: f64, a_k: f64, b_k: f64, f_now: f64, f_next: f64) -> PyResult<f64> {
    let ctx = StockContext::new(a_k, b_k, f_now, f_next).map_err(to_py)?;
    analytics::h_fn(point(y, d_y)?, &ctx).map_err(to_py)
}

#[pyfunction]
fn t4_threshold(y: f64, d_y: f64, delta1: f64, delta2: f64) -> PyResult<f64> {
    analytics::t4_threshold(point(y, d_y)?, delta1, delta2).map_err(to_py)
}

#[pyfunction]
fn counterexample_limit_r(s: f64) -> PyResult<f64> {
    analytics::counterexample_limit_r(s).map_err(to_py)
}

#[pyfunction]
fn counterexample_lhs(s: f64, a: f64) -> PyResult<f64> {
    analytics::counterexample_lhs(s, a).map_err(to_py)
}

/// Parameters of the two-stock underperformance construction.
#[pyclass(frozen, get_all)]
struct Counterexample {
    s: f64,
    m_up: f64,
    m_down: f64,
    a: f64,
    r_limit: f64,
}

#[pymethods]
impl Counterexample {
    fn margin(&self) -> PyResult<f64> {
        Ok(self.m_up - analytics::counterexample_lhs(self.s, self.a).map_err(to_py)?)
    }

    fn __repr__(&self) -> String {
        format!(
            "Counterexample(s={}, m_up={}, m_down={}, a={}, r_limit={})",
            self.s, self.m_up, self.m_down, self.a, self.r_limit
        )
    }
}

#[pyfunction]
fn build_counterexample(s: f64) -> PyResult<Counterexample> {
    let spec = analytics::build_counterexample(s).map_err(to_py)?;
    Ok(Counterexample {
        s: spec.s,
        m_up: spec.m_up,
        m_down: spec.m_down,
        a: spec.a,
        r_limit: spec.r_limit,
    })
}

/// A validated scenario.
#[pyclass(frozen)]
struct Scenario {
    inner: fundsim_core::Scenario,
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: fundsim_core::Scenario::from_json(text).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: fundsim_core::Scenario::load(path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (s, m_up=None, a=None))]
    fn counterexample(s: f64, m_up: Option<f64>, a: Option<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: fundsim_core::Scenario::counterexample(s, m_up, a).map_err(to_py)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.schedule.times().to_vec()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner.to_file()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Runs checks and the configured engine; returns the summary as a dict.
    #[pyo3(signature = (paths=None, seed=None, threads=None))]
    fn run(&self, py: Python<'_>, paths: Option<u64>, seed: Option<u64>, threads: Option<usize>) -> PyResult<Py<PyAny>> {
        let options = RunOptions { paths, seed, threads };
        let summary = py.detach(|| run::run_scenario(&self.inner, options)).map_err(to_py)?;
        json_to_py(py, &summary)
    }

    /// Condition reports for every requested check.
    fn check(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let sets = run::check_scenario(&self.inner).map_err(to_py)?;
        json_to_py(py, &sets)
    }

    /// Exact `(t, E log ratio)` pairs; lattice scenarios only.
    fn exact(&self, py: Python<'_>) -> PyResult<Vec<(f64, f64)>> {
        let report = py
            .detach(|| expectation::exact_expected_log_ratio(&self.inner))
            .map_err(to_py)?;
        Ok(report.entries.iter().map(|e| (e.t, e.estimate)).collect())
    }

    /// Monte Carlo report CSV.
    #[pyo3(signature = (paths=None, seed=None, threads=None))]
    fn mc_csv(&self, py: Python<'_>, paths: Option<u64>, seed: Option<u64>, threads: Option<usize>) -> PyResult<String> {
        let mut settings = self.inner.mc.clone();
        settings.paths = paths.unwrap_or(settings.paths);
        settings.master_seed = seed.unwrap_or(settings.master_seed);
        settings.threads = threads.or(settings.threads);
        py.detach(|| expectation::mc_expected_log_ratio(&self.inner, &settings).and_then(|r| r.to_csv_string()))
            .map_err(to_py)
    }
}

#[pymodule]
fn fundsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(phi, m)?)?;
    m.add_function(wrap_pyfunction!(g_fn, m)?)?;
    m.add_function(wrap_pyfunction!(f_increment, m)?)?;
    m.add_function(wrap_pyfunction!(h_fn, m)?)?;
    m.add_function(wrap_pyfunction!(t4_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(counterexample_limit_r, m)?)?;
    m.add_function(wrap_pyfunction!(counterexample_lhs, m)?)?;
    m.add_function(wrap_pyfunction!(build_counterexample, m)?)?;
    m.add_class::<Counterexample>()?;
    m.add_class::<Scenario>()?;
    Ok(())
}
