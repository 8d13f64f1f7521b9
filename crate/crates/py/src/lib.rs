//! Python bindings: machines, atomic ops, the experience pool, single runs
//! and benchmarks over the scripted or fixture backends.
//!
//! Structured values cross the boundary as plain dicts and lists (via JSON).

use std::path::PathBuf;
use std::sync::Mutex;

use evofsm_core::backends::{Backends, BackendError, FixtureTools, Script, ScriptedChat, ToolRegistry};
use evofsm_core::harness::{self, load_dataset, BenchmarkItem, HarnessError, HarnessParams, Mode};
use evofsm_core::memory::{HashEmbedder, PoolError};
use evofsm_core::{
    apply_op, deserialize_config, scenarios, serialize_config, undo, validate_config, AtomicOp, EvolveLimits,
    ExperiencePool, FsmConfig, RunLimits,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(evofsm, EvoFsmError, PyException, "Base class for errors raised by evofsm.");
create_exception!(evofsm, BackendFailure, EvoFsmError, "A chat, tool or embedding backend failed.");
create_exception!(evofsm, PoolCorrupt, EvoFsmError, "The experience pool file is unreadable or inconsistent.");
create_exception!(evofsm, OpRejected, EvoFsmError, "An atomic operation was refused.");

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A JSON string as is, or any JSON-serializable Python value dumped.
fn json_text(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    if obj.is_instance_of::<PyString>() {
        obj.extract()
    } else {
        obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()
    }
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    serde_json::from_str(&json_text(obj)?).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn backend_err(e: BackendError) -> PyErr {
    BackendFailure::new_err(e.to_string())
}

fn pool_err(e: PoolError) -> PyErr {
    PoolCorrupt::new_err(e.to_string())
}

fn harness_err(e: HarnessError) -> PyErr {
    match e {
        HarnessError::Pool(e) => pool_err(e),
        other => BackendFailure::new_err(other.to_string()),
    }
}

/// A state machine definition. Immutable: edits return a new machine.
#[pyclass(name = "FsmConfig", module = "evofsm", frozen)]
struct PyConfig {
    inner: FsmConfig,
}

#[pymethods]
impl PyConfig {
    /// Builds a machine from a dict or a JSON string; raises ValueError on
    /// schema errors. Validity is checked separately by `validate`.
    #[new]
    fn new(spec: &Bound<'_, PyAny>) -> PyResult<Self> {
        let inner = deserialize_config(&json_text(spec)?).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    /// The search, browse, analysis machine.
    #[staticmethod]
    fn default() -> Self {
        Self { inner: scenarios::default_config() }
    }

    fn to_json(&self) -> String {
        serialize_config(&self.inner)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    /// Violations as a list of dicts; empty when valid.
    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &validate_config(&self.inner).violations)
    }

    fn is_valid(&self) -> bool {
        validate_config(&self.inner).is_valid()
    }

    #[getter]
    fn version(&self) -> u64 {
        self.inner.version
    }

    #[getter]
    fn initial_state(&self) -> &str {
        &self.inner.initial_state
    }

    #[getter]
    fn state_ids(&self) -> Vec<String> {
        self.inner.states.iter().map(|s| s.id.clone()).collect()
    }

    #[getter]
    fn transition_ids(&self) -> Vec<String> {
        self.inner.transitions.iter().map(|t| t.id.clone()).collect()
    }

    /// Applies one op; returns the new machine and the inverse op.
    fn apply_op<'py>(&self, py: Python<'py>, op: &Bound<'py, PyAny>) -> PyResult<(PyConfig, Bound<'py, PyAny>)> {
        let op: AtomicOp = from_py(op)?;
        let (next, inverse) = apply_op(&self.inner, &op).map_err(|e| OpRejected::new_err(e.to_string()))?;
        Ok((PyConfig { inner: next }, to_py(py, &inverse)?))
    }

    fn undo(&self, inverse: &Bound<'_, PyAny>) -> PyResult<PyConfig> {
        let inverse: AtomicOp = from_py(inverse)?;
        let inner = undo(&self.inner, &inverse).map_err(|e| OpRejected::new_err(e.to_string()))?;
        Ok(PyConfig { inner })
    }

    /// Equal apart from the version counter.
    fn structurally_eq(&self, other: PyRef<'_, PyConfig>) -> bool {
        self.inner.structurally_eq(&other.inner)
    }

    fn __eq__(&self, other: &Bound<'_, PyAny>) -> bool {
        other.cast::<PyConfig>().is_ok_and(|o| o.get().inner == self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "FsmConfig(version={}, states={:?}, transitions={})",
            self.inner.version,
            self.state_ids(),
            self.inner.transitions.len()
        )
    }
}

/// Experience records, in memory or backed by an append-only JSONL file.
#[pyclass(name = "ExperiencePool", module = "evofsm", frozen)]
struct PyPool {
    inner: Mutex<ExperiencePool>,
}

impl PyPool {
    fn lock(&self) -> std::sync::MutexGuard<'_, ExperiencePool> {
        self.inner.lock().expect("pool lock")
    }
}

#[pymethods]
impl PyPool {
    #[new]
    #[pyo3(signature = (path=None, dim=256))]
    fn new(path: Option<PathBuf>, dim: usize) -> PyResult<Self> {
        let pool = match path {
            Some(p) => ExperiencePool::open(p, dim).map_err(pool_err)?,
            None => ExperiencePool::in_memory(dim),
        };
        Ok(Self { inner: Mutex::new(pool) })
    }

    /// Checks every line and the pool invariants; returns (success, failure).
    #[staticmethod]
    fn verify(path: PathBuf) -> PyResult<(usize, usize)> {
        let s = ExperiencePool::verify(path).map_err(pool_err)?;
        Ok((s.success, s.failure))
    }

    fn stats(&self) -> (usize, usize) {
        let s = self.lock().stats();
        (s.success, s.failure)
    }

    fn get<'py>(&self, py: Python<'py>, id: &str) -> PyResult<Option<Bound<'py, PyAny>>> {
        self.lock().get(id).map(|r| to_py(py, r)).transpose()
    }

    fn records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.lock().records())
    }

    /// Records most similar to `query`, as (id, similarity) pairs.
    #[pyo3(signature = (query, k=3))]
    fn retrieve(&self, query: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
        let pool = self.lock();
        let mut e = HashEmbedder::new(pool.embedding_dim());
        let q = evofsm_core::embed(query, &mut e).map_err(backend_err)?;
        Ok(pool
            .retrieve_top_k(&q, k, evofsm_core::RecordFilter::All)
            .into_iter()
            .map(|r| (r.record.id, r.similarity))
            .collect())
    }

    fn __len__(&self) -> usize {
        self.lock().len()
    }

    fn __repr__(&self) -> String {
        let pool = self.lock();
        let s = pool.stats();
        match pool.path() {
            Some(p) => format!("ExperiencePool({}, {s})", p.display()),
            None => format!("ExperiencePool(<memory>, {s})"),
        }
    }
}

struct Sources {
    script: Script,
    tools: FixtureTools,
    dim: usize,
}

impl Sources {
    fn load(script: Option<PathBuf>, fixtures: Option<PathBuf>, dim: usize) -> PyResult<Self> {
        let script = match script {
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|e| PyValueError::new_err(format!("{}: {e}", p.display())))?;
                Script::from_json(&text).map_err(backend_err)?
            }
            None => scenarios::world_script(),
        };
        let tools = match fixtures {
            Some(dir) => FixtureTools::load_dir(dir).map_err(backend_err)?,
            None => scenarios::world_tools(),
        };
        Ok(Self { script, tools, dim })
    }

    fn build(&self) -> Result<Backends, BackendError> {
        Ok(Backends::new(
            Box::new(ScriptedChat::new(self.script.clone())?),
            ToolRegistry::new(Box::new(self.tools.clone())),
            Box::new(HashEmbedder::new(self.dim)),
        ))
    }
}

fn params(max_iterations: usize, max_states: usize, max_steps: usize) -> HarnessParams {
    HarnessParams {
        limits: EvolveLimits { max_iterations, max_states, run: RunLimits { max_steps, ..RunLimits::default() } },
        ..HarnessParams::default()
    }
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    mode.parse().map_err(PyValueError::new_err)
}

/// Answers one query on scripted backends (the built-in world unless
/// `script` and `fixtures` are given). Returns a dict with the answer,
/// halt reason, op log, verdicts, final machine and pool record id.
#[pyfunction]
#[pyo3(signature = (query, config=None, mode="evofsm", pool=None, max_iterations=3, max_states=10, max_steps=20, script=None, fixtures=None))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    query: &str,
    config: Option<PyRef<'py, PyConfig>>,
    mode: &str,
    pool: Option<PyRef<'py, PyPool>>,
    max_iterations: usize,
    max_states: usize,
    max_steps: usize,
    script: Option<PathBuf>,
    fixtures: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let mode = parse_mode(mode)?;
    let config = config.map(|c| c.inner.clone()).unwrap_or_else(scenarios::default_config);
    let dim = pool.as_ref().map_or(256, |p| p.lock().embedding_dim());
    let sources = Sources::load(script, fixtures, dim)?;
    let mut backends = sources.build().map_err(backend_err)?;
    let p = params(max_iterations, max_states, max_steps);
    let solved = harness::solve(mode, &config, query, &mut backends, pool.as_ref().map(|p| &p.inner), &p)
        .map_err(harness_err)?;
    let o = &solved.outcome;
    let out = serde_json::json!({
        "answer": solved.answer(),
        "halted_reason": o.final_trajectory.halted_reason,
        "iterations_used": o.iterations_used,
        "succeeded": o.succeeded,
        "op_log": o.op_log,
        "verdicts": o.verdicts,
        "steps": o.final_trajectory.steps.len(),
        "prior": solved.prior,
        "record_id": solved.record.as_ref().map(|r| r.id.clone()),
    });
    let dict = to_py(py, &out)?;
    dict.set_item("final_config", PyConfig { inner: o.final_config.clone() })?;
    Ok(dict)
}

/// Runs a dataset (JSONL path or list of {"id","question","answer"} dicts)
/// and returns the report as a dict.
#[pyfunction(name = "bench")]
#[pyo3(signature = (dataset, mode="evofsm", config=None, pool=None, workers=1, max_iterations=3, max_states=10, max_steps=20, script=None, fixtures=None))]
#[allow(clippy::too_many_arguments)]
fn run_bench<'py>(
    py: Python<'py>,
    dataset: &Bound<'py, PyAny>,
    mode: &str,
    config: Option<PyRef<'py, PyConfig>>,
    pool: Option<PyRef<'py, PyPool>>,
    workers: usize,
    max_iterations: usize,
    max_states: usize,
    max_steps: usize,
    script: Option<PathBuf>,
    fixtures: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let mode = parse_mode(mode)?;
    let items: Vec<BenchmarkItem> = match dataset.extract::<PathBuf>() {
        Ok(path) => load_dataset(path).map_err(|e| PyValueError::new_err(e.to_string()))?,
        Err(_) => from_py(dataset)?,
    };
    let config = config.map(|c| c.inner.clone()).unwrap_or_else(scenarios::default_config);
    let dim = pool.as_ref().map_or(256, |p| p.lock().embedding_dim());
    let sources = Sources::load(script, fixtures, dim)?;
    let factory = |_: &BenchmarkItem| sources.build();
    let p = params(max_iterations, max_states, max_steps);
    let report = harness::bench(&items, mode, &config, &p, &factory, pool.as_ref().map(|p| &p.inner), workers);
    to_py(py, &report)
}

#[pyfunction]
fn scenario_names() -> Vec<&'static str> {
    scenarios::SCENARIO_NAMES.to_vec()
}

/// Writes a scenario's script, corpus, config and dataset; returns the paths.
#[pyfunction]
fn export_scenario(name: &str, dir: PathBuf) -> PyResult<Vec<PathBuf>> {
    scenarios::export(name, &dir).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Unit-norm hashed bag-of-words embedding.
#[pyfunction]
#[pyo3(signature = (text, dim=256))]
fn embed(text: &str, dim: usize) -> PyResult<Vec<f64>> {
    evofsm_core::embed(text, &mut HashEmbedder::new(dim)).map_err(backend_err)
}

#[pyfunction]
fn exact_match(predicted: &str, gold: &str) -> bool {
    harness::exact_match(predicted, gold)
}

#[pyfunction]
fn normalize_answer(text: &str) -> String {
    harness::normalize_answer(text)
}

#[pymodule]
fn evofsm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("EvoFsmError", py.get_type::<EvoFsmError>())?;
    m.add("BackendFailure", py.get_type::<BackendFailure>())?;
    m.add("PoolCorrupt", py.get_type::<PoolCorrupt>())?;
    m.add("OpRejected", py.get_type::<OpRejected>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyPool>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_names, m)?)?;
    m.add_function(wrap_pyfunction!(export_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_function(wrap_pyfunction!(exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_answer, m)?)?;
    Ok(())
}
