//! Python bindings. Structured results come back as plain dicts/lists.

use std::path::PathBuf;

use agrl_core::run::{
    bench_csv, eval_checkpoint, gradcheck_suite, list_goals, run_bench, BenchConfig, BenchMethod, Method, RunConfig,
    Trainer as CoreTrainer,
};
use agrl_core::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        Error::Config { .. } | Error::UnknownGoal(_) | Error::InvalidArgument(_) | Error::Checkpoint { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
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

fn ser<'py, T: serde::Serialize>(py: Python<'py>, x: &T) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(x).map_err(|e| py_err(e.into()))?)
}

fn load(config: Option<PathBuf>, overrides: Option<Vec<String>>) -> PyResult<RunConfig> {
    RunConfig::load(config.as_deref(), &overrides.unwrap_or_default()).map_err(py_err)
}

/// A training run. `config` is a JSON file path; `overrides` are dotted
/// `key=value` strings applied on top.
#[pyclass(unsendable)]
struct Trainer {
    inner: CoreTrainer,
}

#[pymethods]
impl Trainer {
    #[new]
    #[pyo3(signature = (config=None, overrides=None))]
    fn new(config: Option<PathBuf>, overrides: Option<Vec<String>>) -> PyResult<Self> {
        Ok(Self {
            inner: CoreTrainer::new(load(config, overrides)?).map_err(py_err)?,
        })
    }

    #[getter]
    fn step(&self) -> u64 {
        self.inner.step
    }

    #[getter]
    fn goal_names(&self) -> Vec<String> {
        self.inner.names.clone()
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        ser(py, &self.inner.cfg)
    }

    /// One collect + update round.
    fn iterate(&mut self) -> PyResult<()> {
        self.inner.iterate().map_err(py_err)
    }

    /// Trains to `total_steps`; returns the metrics records.
    #[pyo3(signature = (out_dir=None))]
    fn train<'py>(&mut self, py: Python<'py>, out_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
        let recs = self.inner.train(out_dir.as_deref(), |_, _| Ok(())).map_err(py_err)?;
        ser(py, &recs)
    }

    /// Greedy evaluation; returns [(goal name, success rate)].
    #[pyo3(signature = (episodes=16))]
    fn evaluate(&self, episodes: usize) -> PyResult<Vec<(String, f64)>> {
        let r = self
            .inner
            .evaluate(agrl_core::run::Component::Acting, &[], episodes)
            .map_err(py_err)?;
        Ok(r.goals
            .iter()
            .zip(&r.per_goal_success)
            .map(|(g, &s)| (self.inner.names[g.index()].clone(), s))
            .collect())
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save_checkpoint(&dir).map_err(py_err)
    }

    fn load(&mut self, dir: PathBuf) -> PyResult<()> {
        self.inner.load_checkpoint(&dir).map_err(py_err)
    }
}

#[pyfunction]
fn methods() -> Vec<&'static str> {
    Method::ALL.iter().map(|m| m.name()).collect()
}

/// Per-goal evaluation report of a checkpoint directory (fresh parameters if None).
#[pyfunction]
#[pyo3(signature = (checkpoint=None, config=None, overrides=None, goal=None, episodes=16))]
fn evaluate<'py>(
    py: Python<'py>,
    checkpoint: Option<PathBuf>,
    config: Option<PathBuf>,
    overrides: Option<Vec<String>>,
    goal: Option<String>,
    episodes: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = load(config, overrides)?;
    let s = eval_checkpoint(&cfg, checkpoint.as_deref(), goal.as_deref(), episodes).map_err(py_err)?;
    ser(py, &s)
}

/// [(loss name, max relative error)] from the finite-difference suite.
#[pyfunction]
#[pyo3(signature = (method=None, seed=0))]
fn gradcheck(method: Option<&str>, seed: u64) -> PyResult<Vec<(String, f64)>> {
    let m = method.map(Method::parse).transpose().map_err(py_err)?;
    Ok(gradcheck_suite(m, seed)
        .map_err(py_err)?
        .into_iter()
        .map(|r| (r.loss, r.max_rel_error))
        .collect())
}

/// Throughput table as CSV text (`goal_count,method,sps`).
#[pyfunction]
#[pyo3(name = "bench", signature = (methods=None, goal_counts=None, steps=4096, width=256, minibatch=256, update_only=false, seed=0))]
fn bench_py(
    methods: Option<Vec<String>>,
    goal_counts: Option<Vec<usize>>,
    steps: u64,
    width: usize,
    minibatch: usize,
    update_only: bool,
    seed: u64,
) -> PyResult<String> {
    let mut cfg = BenchConfig {
        steps,
        width,
        minibatch_size: minibatch,
        update_only,
        seed,
        ..BenchConfig::default()
    };
    if let Some(ms) = methods {
        cfg.methods = ms
            .iter()
            .map(|m| BenchMethod::parse(m))
            .collect::<agrl_core::Result<_>>()
            .map_err(py_err)?;
    }
    if let Some(g) = goal_counts {
        cfg.goal_counts = g;
    }
    Ok(bench_csv(&run_bench(&cfg).map_err(py_err)?))
}

#[pyfunction]
#[pyo3(name = "list_goals", signature = (config=None, overrides=None))]
fn list_goals_py(config: Option<PathBuf>, overrides: Option<Vec<String>>) -> PyResult<String> {
    list_goals(&load(config, overrides)?).map_err(py_err)
}

#[pymodule]
fn agrl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Trainer>()?;
    m.add_function(wrap_pyfunction!(methods, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(bench_py, m)?)?;
    m.add_function(wrap_pyfunction!(list_goals_py, m)?)?;
    Ok(())
}
