//! Python bindings. JSON-shaped engine values cross the boundary as plain
//! dicts and lists.

use std::path::PathBuf;
use std::sync::Arc;

use labloom::ml::expected_improvement as ei;
use labloom::builtin::with_builtins;
use labloom::datastore::{export_scalars as export, ArtifactStore, ExportFormat};
use labloom::dsl::{parse_workflow, validate as validate_spec};
use labloom::engine::{make_headless, ConfigPatch, EngineError, Run as EngineRun, RunOptions};
use labloom::plugin::PluginRegistry;
use pyo3::exceptions::{PyKeyError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde_json::Value;

fn engine_err(e: EngineError) -> PyErr {
    match e {
        EngineError::NotFound(_) => PyKeyError::new_err(e.to_string()),
        EngineError::Validation(_) | EngineError::Plan(_) | EngineError::Invalid(_) => {
            PyValueError::new_err(e.to_string())
        }
        EngineError::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &(impl serde::Serialize + ?Sized)) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn registry() -> Arc<PluginRegistry> {
    Arc::new(with_builtins())
}

/// Validation report of a workflow document: `{"ok": bool, "issues": [...]}`.
#[pyfunction]
fn validate<'py>(py: Python<'py>, xml: &str) -> PyResult<Bound<'py, PyAny>> {
    let spec = parse_workflow(xml).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &validate_spec(&spec, &registry()))
}

/// Descriptors of the built-in plugins.
#[pyfunction]
fn plugins<'py>(py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
    let reg = registry();
    let all: Vec<_> = reg.descriptors().collect();
    to_py(py, &all)
}

#[pyfunction]
#[pyo3(signature = (mu, sigma, f_min, xi = 0.0))]
fn expected_improvement(mu: f64, sigma: f64, f_min: f64, xi: f64) -> f64 {
    ei(mu, sigma, f_min, xi)
}

/// Every scalar artifact of a run directory as CSV or JSON text.
#[pyfunction]
#[pyo3(signature = (run_dir, format = "csv"))]
fn export_scalars(run_dir: PathBuf, format: &str) -> PyResult<String> {
    let fmt = match format {
        "csv" => ExportFormat::Csv,
        "json" => ExportFormat::Json,
        f => return Err(PyValueError::new_err(format!("unknown format '{f}'"))),
    };
    let store = ArtifactStore::open(&run_dir).map_err(|e| PyOSError::new_err(e.to_string()))?;
    export(&store, fmt).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pyclass(unsendable)]
struct Run {
    inner: EngineRun,
}

#[pymethods]
impl Run {
    #[new]
    #[pyo3(signature = (xml, runs_dir, seed = None, base_dir = None, headless = false, run_id = None))]
    fn new(
        xml: &str,
        runs_dir: PathBuf,
        seed: Option<u64>,
        base_dir: Option<PathBuf>,
        headless: bool,
        run_id: Option<String>,
    ) -> PyResult<Run> {
        let reg = registry();
        let spec = parse_workflow(xml).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let spec = if headless { make_headless(&spec, &reg) } else { spec };
        let opts = RunOptions {
            run_id,
            seed,
            base_dir: base_dir.unwrap_or_default(),
        };
        let inner = EngineRun::start(reg, spec, &runs_dir, opts).map_err(engine_err)?;
        Ok(Run { inner })
    }

    /// Continue a run from a checkpoint file.
    #[staticmethod]
    fn from_checkpoint(checkpoint: PathBuf) -> PyResult<Run> {
        let inner = EngineRun::resume_from(registry(), &checkpoint).map_err(engine_err)?;
        Ok(Run { inner })
    }

    #[getter]
    fn run_id(&self) -> String {
        self.inner.run_id().to_string()
    }

    #[getter]
    fn phase(&self) -> &'static str {
        self.inner.phase().as_str()
    }

    #[getter]
    fn run_dir(&self) -> PathBuf {
        self.inner.run_dir().to_path_buf()
    }

    #[getter]
    fn state<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.state())
    }

    #[getter]
    fn pending<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.state().pending_interactions)
    }

    #[getter]
    fn artifacts<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.store().records())
    }

    /// Events with index `since` and above.
    #[pyo3(signature = (since = 0))]
    fn events<'py>(&self, py: Python<'py>, since: u64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.events().since(since))
    }

    fn artifact_value<'py>(&self, py: Python<'py>, artifact_id: &str) -> PyResult<Bound<'py, PyAny>> {
        let store = self.inner.store();
        let rec = store
            .get(artifact_id)
            .ok_or_else(|| PyKeyError::new_err(artifact_id.to_string()))?;
        let v = store.value(rec).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        to_py(py, &v)
    }

    /// Execute one node or loop decision; returns the events it produced.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let events = self.inner.step().map_err(engine_err)?;
        to_py(py, &events)
    }

    fn run_to_end(&mut self) -> PyResult<&'static str> {
        Ok(self.inner.run_to_end().map_err(engine_err)?.as_str())
    }

    /// Checkpoint path.
    fn pause(&mut self) -> PyResult<PathBuf> {
        self.inner.pause().map_err(engine_err)
    }

    fn resume(&mut self) -> PyResult<()> {
        self.inner.resume().map_err(engine_err)
    }

    fn patch<'py>(
        &mut self,
        py: Python<'py>,
        node_id: String,
        param_path: String,
        value: &Bound<'py, PyAny>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let applied = self
            .inner
            .patch_config(ConfigPatch {
                node_id,
                param_path,
                new_value: from_py(value)?,
                applied_at_iteration: Default::default(),
            })
            .map_err(engine_err)?;
        to_py(py, &applied)
    }

    fn answer(&mut self, request_id: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        self.inner.answer(request_id, from_py(value)?).map_err(engine_err)
    }
}

#[pymodule]
fn labloom_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(plugins, m)?)?;
    m.add_function(wrap_pyfunction!(expected_improvement, m)?)?;
    m.add_function(wrap_pyfunction!(export_scalars, m)?)?;
    m.add_class::<Run>()?;
    Ok(())
}
