//! CLI behaviour, persisted results and determinism of the run harness.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use reebflow::harness::config::parse_config;
use reebflow::harness::experiments::run_experiment;
use reebflow::harness::table::SERIES;
use reebflow::harness::{self, catalog, verdicts_from_csv};

fn reebflow(args: &[&str], workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_reebflow"));
    cmd.args(args).env("RUST_LOG", "warn");
    match workers {
        Some(w) => cmd.env(harness::WORKERS_ENV, w),
        None => cmd.env_remove(harness::WORKERS_ENV),
    };
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let out = dir.join("out");
    let text = format!("[run]\noutput_dir = {:?}\n{body}", out.to_str().unwrap());
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out/manifest.json")).unwrap()).unwrap()
}

/// Small sizes so a handful of experiments finish in seconds.
const REDUCED: &str = r#"
[radial_exactness]
paths = 2000

[projection_calculus]
pairs = 5
grid = 160

[hs_scaling]
grid = 32
noise = { s = 1.2, p = 2.0, k_max = 4.0 }

[spde_convergence]
paths = 4
grid = 32
mesh_cells = 100
noise = { s = 1.2, p = 2.0, k_max = 3.0 }
"#;

#[test]
fn list_experiments_names_the_catalog() {
    let out = reebflow(&["list-experiments"], None);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for info in catalog::CATALOG {
        assert!(text.contains(info.id), "missing {}", info.id);
    }
}

#[test]
fn describe_unknown_id_is_a_config_error() {
    assert_eq!(reebflow(&["describe", "semigroup_strong"], None).status.code(), Some(0));
    assert_eq!(reebflow(&["describe", "no_such_thing"], None).status.code(), Some(2));
}

#[test]
fn unknown_hamiltonian_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[semigroup_strong]\nhamiltonian = \"banana\"\n");
    for cmd in ["validate", "run"] {
        let out = reebflow(&[cmd, cfg.to_str().unwrap()], None);
        assert_eq!(out.status.code(), Some(2), "{cmd}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert!(err.contains("semigroup_strong.hamiltonian"), "{cmd}: {err}");
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn bad_worker_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "experiments = []\n");
    for bad in ["0", "many"] {
        let out = reebflow(&["run", cfg.to_str().unwrap()], Some(bad));
        assert_eq!(out.status.code(), Some(2), "{bad}");
        assert!(String::from_utf8(out.stderr).unwrap().contains(harness::WORKERS_ENV));
    }
}

#[test]
fn empty_experiment_list_exits_zero_with_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "experiments = []\n");
    let out = reebflow(&["run", cfg.to_str().unwrap()], Some("2"));
    assert_eq!(out.status.code(), Some(0));
    let m = manifest(dir.path());
    assert_eq!(m["experiments"].as_array().unwrap().len(), 0);
    assert_eq!(m["all_pass"], true);
    let csv = fs::read_to_string(dir.path().join("out/tables.csv")).unwrap();
    assert_eq!(csv.trim_end(), "experiment,label,eps,metric,std_error,lower,budget");
}

#[test]
fn flat_period_is_refused_with_a_pointer_to_the_weak_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "experiments = [\"period_oracle\", \"semigroup_strong\"]\n[semigroup_strong]\nhamiltonian = \"quadratic\"\n",
    );
    let out = reebflow(&["run", cfg.to_str().unwrap()], Some("1"));
    assert_eq!(out.status.code(), Some(1));
    let m = manifest(dir.path());
    let entries = m["experiments"].as_array().unwrap();
    assert_eq!(entries[0]["verdict"]["pass"], true);
    let err = entries[1]["error"].as_str().unwrap();
    assert!(err.contains("period is flat") && err.contains("weak_time_avg"), "{err}");
}

#[test]
fn persisted_tables_reproduce_the_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("experiments = [\"period_oracle\", \"projection_calculus\", \"hs_scaling\"]\n{REDUCED}");
    let cfg = parse_config(&fs::read_to_string(write_config(dir.path(), &body)).unwrap()).unwrap();
    let report = harness::run(&cfg, 2).unwrap();
    let recomputed = verdicts_from_csv(&dir.path().join("out/tables.csv")).unwrap();
    assert_eq!(recomputed.len(), report.records.len());
    for ((id, v), r) in recomputed.iter().zip(&report.records) {
        assert_eq!(id, &r.id);
        assert_eq!(Some(v), r.verdict.as_ref(), "{id}");
    }
    let m = manifest(dir.path());
    for (entry, r) in m["experiments"].as_array().unwrap().iter().zip(&report.records) {
        assert_eq!(entry["seed"].as_u64(), Some(r.seed));
        assert_eq!(entry["verdict"]["pass"].as_bool(), Some(r.passed()));
    }
}

fn files_under(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = vec![];
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let body = format!(
        "seed = 7\nexperiments = [\"radial_exactness\", \"hs_scaling\", \"spde_convergence\", \"period_oracle\"]\n{REDUCED}"
    );
    let runs: Vec<_> = [1, 3]
        .into_iter()
        .map(|w| {
            let dir = tempfile::tempdir().unwrap();
            let cfg = parse_config(&fs::read_to_string(write_config(dir.path(), &body)).unwrap()).unwrap();
            harness::run(&cfg, w).unwrap();
            files_under(&dir.path().join("out"))
        })
        .collect();
    assert!(runs[0].len() >= 4);
    let names = |r: &[(String, Vec<u8>)]| r.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    assert_eq!(names(&runs[0]), names(&runs[1]));
    for ((name, a), (_, b)) in runs[0].iter().zip(&runs[1]) {
        assert!(a == b, "{name} differs between worker counts");
    }
}

fn spec_for(id: &str, overrides: &str) -> reebflow::harness::config::ExperimentSpec {
    let text = format!("[run]\nexperiments = [\"{id}\"]\n[{id}]\n{overrides}");
    parse_config(&text).unwrap().experiments.remove(0).1
}

fn series(out: &reebflow::harness::experiments::ExperimentOutput) -> Vec<(f64, f64, f64)> {
    out.table
        .rows
        .iter()
        .filter(|r| r.label == SERIES)
        .map(|r| (r.metric, r.std_error, r.budget.unwrap_or(f64::NAN)))
        .collect()
}

#[test]
fn zero_time_weight_gives_zero_rows() {
    let spec =
        spec_for("weak_time_avg", "theta = { kind = \"constant\", c = 0.0 }\npaths = 500\neps = [0.2, 0.1, 0.05]\n");
    let rows = series(&run_experiment("weak_time_avg", &spec, 3).unwrap());
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.0 == 0.0), "{rows:?}");

    let spec = spec_for(
        "linear_weak",
        "theta = { kind = \"constant\", c = 0.0 }\npaths = 2\ngrid = 32\neps = [0.2, 0.1, 0.05]\nnoise = { s = 1.2, p = 2.0, k_max = 3.0 }\n",
    );
    let rows = series(&run_experiment("linear_weak", &spec, 3).unwrap());
    assert!(rows.iter().all(|r| r.0 == 0.0), "{rows:?}");
}

#[test]
fn constants_are_fixed_by_both_semigroups() {
    let spec = spec_for(
        "semigroup_strong",
        "u = { kind = \"constant\", c = 1.0 }\ngrid = 48\nmesh_cells = 150\neps = [0.2, 0.1, 0.05]\nprobes = 3\n",
    );
    let rows = series(&run_experiment("semigroup_strong", &spec, 3).unwrap());
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.0 < 1e-12), "{rows:?}");
}

#[test]
fn radial_probe_sits_at_the_error_floor() {
    // u = g(H) is its own lift: the rows carry no eps dependence, only the
    // interpolation error of the tabulated lift and sampling noise remain
    let spec =
        spec_for("weak_time_avg", "u = { kind = \"energy_exp\", rate = 0.5 }\npaths = 4000\neps = [0.2, 0.1, 0.05]\n");
    let rows = series(&run_experiment("weak_time_avg", &spec, 5).unwrap());
    let mean = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
    let se = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    for (m, _, _) in &rows {
        assert!((m - mean).abs() < 3.0 * se, "{rows:?}");
    }
    assert!(mean < 1e-4, "{rows:?}");
}
