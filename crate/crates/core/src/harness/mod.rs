//! Experiment harness: configuration, the catalog, runners and result files.
//!
//! A run writes into `output_dir`:
//! - `tables.csv`, every experiment's rows (deterministic for a given seed);
//! - `manifest.json`, seeds, parameters, verdicts, timings and errors;
//! - `<id>/...`, per-experiment CSV tables and binary snapshots.

pub mod catalog;
pub mod config;
pub mod experiments;
pub mod table;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::numerics::mix_seed;
use catalog::ExperimentInfo;
use config::{ConfigError, ExperimentSpec, RunConfig};
use experiments::{run_experiment, ExperimentOutput};
use table::{verdict, ConvergenceTable, Verdict};

/// Worker-count override for the experiment thread pool.
pub const WORKERS_ENV: &str = "REEBFLOW_WORKERS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("writing tables: {0}")]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Workers from the environment; unset means every available core.
pub fn workers_from_env() -> Result<usize, ConfigError> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(ConfigError::Invalid {
                key: WORKERS_ENV.into(),
                reason: format!("expected a positive integer, got {s:?}"),
            }),
        },
    }
}

/// Seed of the experiment at catalog position `index`.
pub fn experiment_seed(run_seed: u64, info: &ExperimentInfo, spec: &ExperimentSpec) -> u64 {
    spec.seed.unwrap_or_else(|| {
        let index = catalog::CATALOG.iter().position(|i| i.id == info.id).unwrap_or(usize::MAX);
        mix_seed(run_seed, index as u64)
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentRecord {
    pub id: String,
    pub seed: u64,
    pub seconds: f64,
    pub verdict: Option<Verdict>,
    pub error: Option<String>,
    #[serde(skip)]
    pub table: Option<ConvergenceTable>,
}

impl ExperimentRecord {
    pub fn passed(&self) -> bool {
        self.verdict.as_ref().is_some_and(|v| v.pass)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub records: Vec<ExperimentRecord>,
    pub all_pass: bool,
}

/// Runs every selected experiment and writes the result files.
pub fn run(cfg: &RunConfig, workers: usize) -> Result<RunReport, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let outputs: Vec<(u64, f64, Result<ExperimentOutput, String>)> = pool.install(|| {
        cfg.experiments
            .par_iter()
            .map(|(info, spec)| {
                let seed = experiment_seed(cfg.seed, info, spec);
                log::info!("{}: start (seed {seed})", info.id);
                let t0 = Instant::now();
                let out = run_experiment(info.id, spec, seed).map_err(|e| e.to_string());
                let secs = t0.elapsed().as_secs_f64();
                match &out {
                    Ok(_) => log::info!("{}: done in {secs:.1}s", info.id),
                    Err(e) => log::error!("{}: {e}", info.id),
                }
                (seed, secs, out)
            })
            .collect()
    });

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut records = vec![];
    let mut entries = vec![];
    for ((info, spec), (seed, seconds, out)) in cfg.experiments.iter().zip(outputs) {
        let mut entry = json!({ "id": info.id, "seed": seed, "seconds": seconds, "parameters": spec });
        let record = match out {
            Ok(out) => {
                let sub = dir.join(info.id);
                fs::create_dir_all(&sub).map_err(io_err(&sub))?;
                let mut names = vec![];
                for a in &out.artifacts {
                    let p = sub.join(&a.name);
                    fs::write(&p, &a.bytes).map_err(io_err(&p))?;
                    names.push(format!("{}/{}", info.id, a.name));
                }
                let v = verdict(&info.rule, &out.table.rows);
                entry["verdict"] = serde_json::to_value(&v).unwrap_or(Value::Null);
                entry["artifacts"] = json!(names);
                entry["notes"] = json!(out.notes);
                ExperimentRecord {
                    id: info.id.into(),
                    seed,
                    seconds,
                    verdict: Some(v),
                    error: None,
                    table: Some(out.table),
                }
            }
            Err(e) => {
                entry["error"] = json!(e);
                ExperimentRecord { id: info.id.into(), seed, seconds, verdict: None, error: Some(e), table: None }
            }
        };
        entries.push(entry);
        records.push(record);
    }

    let tables: Vec<ConvergenceTable> = records.iter().filter_map(|r| r.table.clone()).collect();
    let path = dir.join("tables.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    table::write_csv(&tables, std::io::BufWriter::new(file))?;

    let all_pass = records.iter().all(ExperimentRecord::passed);
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "workers": workers,
        "experiments": entries,
        "all_pass": all_pass,
    });
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).unwrap_or_default();
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(RunReport { records, all_pass })
}

/// Verdicts recomputed from a persisted `tables.csv`, in file order.
/// Ids not in the catalog are skipped.
pub fn verdicts_from_csv(path: &Path) -> Result<Vec<(String, Verdict)>, HarnessError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let tables = table::read_csv(file).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
    })?;
    Ok(tables
        .into_iter()
        .filter_map(|t| catalog::find(&t.experiment).map(|info| (t.experiment.clone(), verdict(&info.rule, &t.rows))))
        .collect())
}
