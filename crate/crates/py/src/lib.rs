//! Python bindings. Configs cross the boundary as TOML text or as a
//! `Config` handle; metrics and events come back as plain dicts.

use platoon_core::suites::{self, SuiteOptions, SuiteReport};
use platoon_core::{presets, ScenarioConfig, SimOutcome};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

create_exception!(platoon, PlatoonError, PyException);
create_exception!(platoon, ConfigError, PlatoonError);
create_exception!(platoon, DivergenceError, PlatoonError);

fn py_err(e: platoon_core::Error) -> PyErr {
    use platoon_core::Error as E;
    match e {
        E::Config(_) | E::InvalidParams(_) | E::ObserverDesign(_) => ConfigError::new_err(e.to_string()),
        E::NonFinite(_) | E::Divergence { .. } | E::CommunicationFailure { .. } => {
            DivergenceError::new_err(e.to_string())
        }
        E::Safety(_) => PlatoonError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let list = PyList::empty(py);
            for x in a {
                list.append(to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(m) => {
            let d = PyDict::new(py);
            for (k, x) in m {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn serde_to_py<'py, T: Serialize>(py: Python<'py>, x: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(x).map_err(|e| PlatoonError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// A validated scenario configuration.
#[pyclass(name = "Config", module = "platoon", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyConfig {
    /// Parse TOML text, applying `key.path -> value` overrides.
    #[staticmethod]
    #[pyo3(signature = (text, overrides = None))]
    fn from_toml(text: &str, overrides: Option<Vec<(String, String)>>) -> PyResult<Self> {
        let inner = ScenarioConfig::from_toml_with_overrides(text, &overrides.unwrap_or_default()).map_err(py_err)?;
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        presets::by_name(name)
            .map(|inner| PyConfig { inner })
            .ok_or_else(|| ConfigError::new_err(format!("unknown preset `{name}`")))
    }

    /// New config with one value replaced; the value is parsed as TOML.
    fn with_override(&self, key: &str, value: &str) -> PyResult<Self> {
        Ok(PyConfig { inner: self.inner.with_override(key, value).map_err(py_err)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serde_to_py(py, &self.inner)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }

    #[getter]
    fn n_vehicles(&self) -> usize {
        self.inner.vehicles.len()
    }

    fn __repr__(&self) -> String {
        format!("Config(name={:?}, vehicles={}, seed={})", self.inner.name, self.inner.vehicles.len(), self.inner.seed)
    }
}

/// Output of one run.
#[pyclass(name = "Outcome", module = "platoon", frozen)]
struct PyOutcome {
    inner: SimOutcome,
}

#[pymethods]
impl PyOutcome {
    #[getter]
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serde_to_py(py, &self.inner.metrics)
    }

    #[getter]
    fn events<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serde_to_py(py, &self.inner.log.events)
    }

    #[getter]
    fn collision(&self) -> bool {
        self.inner.metrics.collision
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.log.rows.iter().map(|r| r.t).collect()
    }

    /// Spacing error of vehicle `id` (1 is the leader); NaN where undefined.
    fn spacing_error(&self, id: usize) -> Vec<f64> {
        self.column(id, |s| s.e.unwrap_or(f64::NAN))
    }

    fn gap(&self, id: usize) -> Vec<f64> {
        self.column(id, |s| s.gap.unwrap_or(f64::NAN))
    }

    fn speed(&self, id: usize) -> Vec<f64> {
        self.column(id, |s| s.v)
    }

    fn acceleration(&self, id: usize) -> Vec<f64> {
        self.column(id, |s| s.a)
    }

    fn csv(&self) -> String {
        self.inner.log.to_csv_string()
    }

    fn write_csv(&self, path: std::path::PathBuf) -> PyResult<()> {
        let f = std::fs::File::create(&path)?;
        self.inner.log.write_csv(std::io::BufWriter::new(f))?;
        Ok(())
    }
}

impl PyOutcome {
    fn column(&self, id: usize, f: impl Fn(&platoon_core::log::VehicleSample) -> f64) -> Vec<f64> {
        self.inner
            .log
            .rows
            .iter()
            .map(|r| r.vehicles.get(id.wrapping_sub(1)).and_then(Option::as_ref).map_or(f64::NAN, &f))
            .collect()
    }
}

#[pyclass(name = "SuiteReport", module = "platoon", frozen)]
struct PySuiteReport {
    inner: SuiteReport,
}

#[pymethods]
impl PySuiteReport {
    #[getter]
    fn suite(&self) -> String {
        self.inner.suite.clone()
    }

    #[getter]
    fn passed(&self) -> bool {
        self.inner.passed()
    }

    /// `(text, passed, detail)` per claim.
    #[getter]
    fn claims(&self) -> Vec<(String, bool, String)> {
        self.inner.claims.iter().map(|c| (c.text.clone(), c.passed, c.detail.clone())).collect()
    }

    #[getter]
    fn arms(&self) -> Vec<String> {
        self.inner.arms.iter().map(|a| a.label.clone()).collect()
    }

    fn arm_metrics<'py>(&self, py: Python<'py>, label: &str) -> PyResult<Bound<'py, PyAny>> {
        let arm = self.inner.arm(label).ok_or_else(|| PlatoonError::new_err(format!("no arm `{label}`")))?;
        serde_to_py(py, &arm.outcome.metrics)
    }

    fn text(&self) -> String {
        self.inner.to_text()
    }
}

/// Run one scenario. The GIL is released while the simulation runs.
#[pyfunction]
fn run(py: Python<'_>, config: &PyConfig) -> PyResult<PyOutcome> {
    let cfg = config.inner.clone();
    let inner = py.detach(move || platoon_core::run_scenario(&cfg)).map_err(py_err)?;
    Ok(PyOutcome { inner })
}

/// Run a paired suite by name.
#[pyfunction]
#[pyo3(signature = (suite, seed = None, overrides = None, fuzz_runs = 200))]
fn replicate(
    py: Python<'_>,
    suite: &str,
    seed: Option<u64>,
    overrides: Option<Vec<(String, String)>>,
    fuzz_runs: usize,
) -> PyResult<PySuiteReport> {
    let opts = SuiteOptions { seed, overrides: overrides.unwrap_or_default(), fuzz_runs };
    let name = suite.to_string();
    let inner = py.detach(move || suites::replicate(&name, &opts)).map_err(py_err)?;
    Ok(PySuiteReport { inner })
}

/// Consensus limits `(tau0, kp0, kd0, a_max0, a_min0)` of a config's vehicles.
#[pyfunction]
fn group_model(config: &PyConfig) -> (f64, f64, f64, f64, f64) {
    let l = platoon_core::consensus_limits(&config.inner.vehicles);
    let g = l.group();
    (g.tau, g.kp, g.kd, l.a_max0, l.a_min0)
}

/// `|G(jω)|` of the acceleration transfer between consecutive vehicles.
#[pyfunction]
fn string_stability_gain(h: f64, omega: f64) -> f64 {
    platoon_core::controller::string_stability_gain(h, omega)
}

#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    presets::NAMES.to_vec()
}

#[pyfunction]
fn suite_names() -> Vec<&'static str> {
    presets::SUITES.to_vec()
}

#[pymodule]
fn platoon(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<PyConfig>()?;
    m.add_class::<PyOutcome>()?;
    m.add_class::<PySuiteReport>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(replicate, m)?)?;
    m.add_function(wrap_pyfunction!(group_model, m)?)?;
    m.add_function(wrap_pyfunction!(string_stability_gain, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add_function(wrap_pyfunction!(suite_names, m)?)?;
    m.add("PlatoonError", py.get_type::<PlatoonError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("DivergenceError", py.get_type::<DivergenceError>())?;
    Ok(())
}
