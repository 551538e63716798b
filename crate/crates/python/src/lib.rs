//! Python access to the experiment catalog, the run harness and a few
//! geometric primitives.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use reebflow::hamiltonian::HamiltonianField;
use reebflow::harness::{self, catalog, config, experiments};
use reebflow::reeb::{ReebConfig, ReebGraph};

/// `(label, eps, metric, std_error, lower, budget)`
type RowTuple = (String, Option<f64>, f64, f64, Option<f64>, Option<f64>);
/// `(id, passed, seconds, error)`
type RecordTuple = (String, bool, f64, Option<String>);

fn field(name: &str, params: Option<BTreeMap<String, f64>>) -> PyResult<HamiltonianField> {
    HamiltonianField::from_name(name, &params.unwrap_or_default()).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// `(id, title)` for every experiment.
#[pyfunction]
fn list_experiments() -> Vec<(String, String)> {
    catalog::CATALOG.iter().map(|i| (i.id.to_string(), i.title.to_string())).collect()
}

/// Description and default parameters (TOML) of an experiment.
#[pyfunction]
fn describe(id: &str) -> PyResult<(String, String)> {
    let info = catalog::find(id).ok_or_else(|| PyKeyError::new_err(id.to_string()))?;
    Ok((info.description.to_string(), info.defaults.trim().to_string()))
}

/// Ids a config text would run; `ValueError` names the offending key.
#[pyfunction]
fn validate(text: &str) -> PyResult<Vec<String>> {
    let cfg = config::parse_config(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(cfg.experiments.iter().map(|(i, _)| i.id.to_string()).collect())
}

/// Runs a config file and writes its outputs. Returns `all_pass` and one
/// record per experiment.
#[pyfunction]
#[pyo3(signature = (path, workers = None))]
fn run(py: Python<'_>, path: PathBuf, workers: Option<usize>) -> PyResult<(bool, Vec<RecordTuple>)> {
    let cfg = config::load_config(&path).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let workers = match workers {
        Some(0) => return Err(PyValueError::new_err("workers must be positive")),
        Some(n) => n,
        None => harness::workers_from_env().map_err(|e| PyValueError::new_err(e.to_string()))?,
    };
    let report = py.detach(|| harness::run(&cfg, workers)).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let records = report.records.iter().map(|r| (r.id.clone(), r.passed(), r.seconds, r.error.clone())).collect();
    Ok((report.all_pass, records))
}

/// Table rows of one experiment; `overrides` is the body of its TOML section.
#[pyfunction]
#[pyo3(signature = (id, overrides = "", seed = 0))]
fn run_experiment(py: Python<'_>, id: &str, overrides: &str, seed: u64) -> PyResult<Vec<RowTuple>> {
    let info = catalog::find(id).ok_or_else(|| PyKeyError::new_err(id.to_string()))?;
    let text = format!("[run]\nexperiments = [\"{}\"]\n[{}]\n{overrides}\n", info.id, info.id);
    let mut cfg = config::parse_config(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let spec = cfg.experiments.remove(0).1;
    let out = py
        .detach(|| experiments::run_experiment(info.id, &spec, spec.seed.unwrap_or(seed)))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(out.table.rows.into_iter().map(|r| (r.label, r.eps, r.metric, r.std_error, r.lower, r.budget)).collect())
}

/// Builtin Hamiltonian names.
#[pyfunction]
fn hamiltonians() -> Vec<&'static str> {
    HamiltonianField::builtin_names().to_vec()
}

/// `H(x)` for a builtin Hamiltonian.
#[pyfunction]
#[pyo3(signature = (name, x, params = None))]
fn hamiltonian_value(name: &str, x: [f64; 2], params: Option<BTreeMap<String, f64>>) -> PyResult<f64> {
    Ok(field(name, params)?.value(x))
}

/// Orbit period `T_k(z)` on edge `k` of the Reeb graph.
#[pyfunction]
#[pyo3(signature = (name, z, edge = 0, params = None))]
fn period(py: Python<'_>, name: &str, z: f64, edge: usize, params: Option<BTreeMap<String, f64>>) -> PyResult<f64> {
    let f = field(name, params)?;
    py.detach(|| {
        let graph = ReebGraph::build(&f, &ReebConfig { z_max: Some(z.max(1.0) + 1.0), ..ReebConfig::default() })?;
        graph.period(z, edge)
    })
    .map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn reebflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("WORKERS_ENV", harness::WORKERS_ENV)?;
    m.add_function(wrap_pyfunction!(list_experiments, m)?)?;
    m.add_function(wrap_pyfunction!(describe, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(hamiltonians, m)?)?;
    m.add_function(wrap_pyfunction!(hamiltonian_value, m)?)?;
    m.add_function(wrap_pyfunction!(period, m)?)?;
    Ok(())
}
