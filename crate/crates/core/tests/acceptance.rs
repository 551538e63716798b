//! Acceptance run: the full default suite, judged criterion by criterion
//! from the persisted tables, then repeated with another worker count.
//!
//! Prints one PASS/FAIL line per criterion and exits non-zero on any failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use reebflow::hamiltonian::HamiltonianField;
use reebflow::harness::config::{parse_config, ExperimentSpec, RunConfig};
use reebflow::harness::table::{read_csv, ConvergenceTable, Row, SERIES};
use reebflow::harness::{self, RunReport};

/// Two-sample KS critical coefficient at the 1% level.
const KS_C_1PCT: f64 = 1.628;

struct Suite<'a> {
    cfg: &'a RunConfig,
    report: &'a RunReport,
    tables: BTreeMap<String, ConvergenceTable>,
}

impl Suite<'_> {
    fn spec(&self, id: &str) -> &ExperimentSpec {
        &self.cfg.experiments.iter().find(|(i, _)| i.id == id).expect("experiment in suite").1
    }

    fn seconds(&self, id: &str) -> f64 {
        self.report.records.iter().find(|r| r.id == id).map_or(f64::INFINITY, |r| r.seconds)
    }

    fn rows(&self, id: &str, label: &str) -> Vec<&Row> {
        self.tables.get(id).map(|t| t.rows.iter().filter(|r| r.label == label).collect()).unwrap_or_default()
    }

    fn error(&self, id: &str) -> Option<&str> {
        self.report.records.iter().find(|r| r.id == id).and_then(|r| r.error.as_deref())
    }
}

/// Outcome of one criterion: pass flag and a one-line summary.
type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn runtime(s: &Suite, id: &str, limit: f64) -> Check {
    let secs = s.seconds(id);
    ensure(secs < limit, format!("{secs:.1} s (< {limit} s)"))
}

fn eps_grid(s: &Suite, id: &str, want: &[f64]) -> Check {
    let got = &s.spec(id).eps;
    ensure(got == want, format!("eps grid {got:?}"))
}

fn hamiltonian(s: &Suite, id: &str, want: &str) -> Check {
    let got = &s.spec(id).hamiltonian;
    ensure(got == want, format!("H = {got}"))
}

fn no_error(s: &Suite, id: &str) -> Check {
    match s.error(id) {
        Some(e) => Err(format!("error: {e}")),
        None => Ok(String::new()),
    }
}

/// Series values against eps, in table order.
fn series(s: &Suite, id: &str) -> Vec<(f64, f64, f64)> {
    s.rows(id, SERIES).iter().map(|r| (r.eps.unwrap_or(f64::NAN), r.metric, r.budget.unwrap_or(f64::NAN))).collect()
}

fn strictly_decreasing(rows: &[(f64, f64, f64)], min_len: usize) -> Check {
    let vals: Vec<String> = rows.iter().map(|r| format!("{:.3e}", r.1)).collect();
    let ok = rows.len() >= min_len && rows.windows(2).all(|w| w[1].1 < w[0].1);
    ensure(ok, format!("series [{}]", vals.join(", ")))
}

fn final_within(rows: &[(f64, f64, f64)], factor: f64) -> Check {
    let Some(&(_, m, b)) = rows.last() else { return Err("no rows".into()) };
    ensure(m < factor * b, format!("final {m:.3e} < {factor} x budget {b:.3e} (ratio {:.2})", m / b))
}

fn all(parts: Vec<Check>) -> Check {
    let mut ok = true;
    let text: Vec<String> = parts
        .into_iter()
        .map(|p| match p {
            Ok(s) => s,
            Err(s) => {
                ok = false;
                format!("[x] {s}")
            }
        })
        .filter(|s| !s.is_empty())
        .collect();
    ensure(ok, text.join("; "))
}

fn c1_period(s: &Suite) -> Check {
    let id = "period_oracle";
    let err = s.rows(id, "period_max_error").first().map_or(f64::INFINITY, |r| r.metric);
    all(vec![
        no_error(s, id),
        hamiltonian(s, id, "quadratic"),
        ensure(err < 1e-6, format!("max |T - pi| = {err:.2e} (< 1e-6)")),
        runtime(s, id, 1.0),
    ])
}

fn c2_radial(s: &Suite) -> Check {
    let id = "radial_exactness";
    let spec = s.spec(id);
    let n = spec.paths as f64;
    let crit = KS_C_1PCT * (2.0 / n).sqrt();
    let mut parts = vec![
        no_error(s, id),
        hamiltonian(s, id, "quadratic"),
        eps_grid(s, id, &[0.1, 0.01]),
        ensure(spec.paths == 100_000 && spec.horizon == 0.5, format!("n = {}, t = {}", spec.paths, spec.horizon)),
    ];
    let ks = s.rows(id, "ks");
    let gaps = s.rows(id, "mean_gap");
    parts.push(ensure(ks.len() == 2 && gaps.len() == 2, format!("{} ks rows", ks.len())));
    for r in ks {
        parts.push(ensure(r.metric < crit, format!("KS D = {:.4} (< {crit:.4})", r.metric)));
    }
    for r in gaps {
        parts.push(ensure(
            r.metric.abs() < 3.0 * r.std_error,
            format!("|E H - H(x) - 2t| = {:.4} (< 3 SE = {:.4})", r.metric.abs(), 3.0 * r.std_error),
        ));
    }
    parts.push(runtime(s, id, 120.0));
    all(parts)
}

fn c3_projection(s: &Suite) -> Check {
    let id = "projection_calculus";
    let spec = s.spec(id);
    let mut parts = vec![no_error(s, id), ensure(spec.pairs == 100, format!("{} pairs", spec.pairs))];
    let mut worst = 0.0f64;
    for name in HamiltonianField::builtin_names() {
        let label = HamiltonianField::from_name(name, &spec.hamiltonian_params).expect("builtin").name();
        for rel in ["contraction", "isometry", "duality", "product"] {
            match s.rows(id, &format!("{label}:{rel}")).first() {
                // contraction rows hold |u^|/|u| - 1, negative when the inequality holds
                Some(r) if rel == "contraction" => {
                    parts.push(
                        ensure(r.metric <= 1e-2, format!("{label}:{rel} = {:.2e}", r.metric)).map(|_| String::new()),
                    );
                }
                Some(r) => {
                    worst = worst.max(r.metric.abs());
                    parts.push(
                        ensure(r.metric.abs() <= 1e-2, format!("{label}:{rel} = {:.2e}", r.metric))
                            .map(|_| String::new()),
                    );
                }
                None => parts.push(Err(format!("missing {label}:{rel}"))),
            }
        }
    }
    parts.push(Ok(format!("worst relative error {worst:.2e} (<= 1e-2)")));
    all(parts)
}

fn c4_kernel(s: &Suite) -> Check {
    let id = "kernel_bound";
    let spec = s.spec(id);
    let mut parts = vec![
        no_error(s, id),
        eps_grid(s, id, &[0.1, 0.05, 0.02]),
        ensure(spec.times == [0.25, 1.0], format!("t = {:?}", spec.times)),
    ];
    let viol = s.rows(id, "violations");
    parts.push(ensure(viol.len() == 3, format!("{} eps covered", viol.len())));
    let worst = viol.iter().map(|r| r.metric).fold(0.0, f64::max);
    parts.push(ensure(worst <= 0.01, format!("bins above C: {:.2}% (<= 1%)", 100.0 * worst)));
    let stab = s.rows(id, "stability").first().map_or(f64::INFINITY, |r| r.metric);
    parts.push(ensure(stab <= 2.0, format!("C ratio across eps {stab:.3} (<= 2)")));
    parts.push(runtime(s, id, 600.0));
    all(parts)
}

fn c5_hs(s: &Suite) -> Check {
    let id = "hs_scaling";
    let p = s.spec(id).noise.p;
    let lower = -(p - 1.0) / p - 0.15;
    let mut parts = vec![no_error(s, id), ensure(p == 2.0, format!("p = {p}"))];
    let slopes = s.rows(id, "slope");
    parts.push(ensure(!slopes.is_empty(), format!("{} slopes", slopes.len())));
    for r in slopes {
        parts.push(ensure(r.metric >= lower && r.metric <= 0.0, format!("slope {:.3} in [{lower:.2}, 0]", r.metric)));
    }
    for r in s.rows(id, "tail") {
        parts.push(ensure(r.metric < 0.05, format!("tail {:.2e} (< 5%)", r.metric)));
    }
    all(parts)
}

fn convergence(s: &Suite, id: &str, h: &str, grid: &[f64], with_final: bool, limit: Option<f64>) -> Check {
    let rows = series(s, id);
    let mut parts = vec![no_error(s, id), hamiltonian(s, id, h), eps_grid(s, id, grid)];
    parts.push(ensure(rows.len() == grid.len(), format!("{} rows", rows.len())).map(|_| String::new()));
    parts.push(strictly_decreasing(&rows, 3));
    if with_final {
        parts.push(final_within(&rows, 3.0));
    }
    if let Some(l) = limit {
        parts.push(runtime(s, id, l));
    }
    all(parts)
}

const GRID4: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

fn c8_spde(s: &Suite) -> Check {
    let id = "spde_convergence";
    let paths = s.spec(id).paths;
    let c = convergence(s, id, "quartic_well", &[0.2, 0.1, 0.05], false, Some(1800.0));
    let n = ensure(paths == 64, format!("n = {paths}"));
    all(vec![n, c])
}

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).expect("output dir") {
            let p = e.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "manifest.json") {
                let rel = p.strip_prefix(root).expect("under root").to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).expect("readable"));
            }
        }
    }
    out
}

fn c10_determinism(a: &Path, b: &Path) -> Check {
    let (fa, fb) = (files_under(a), files_under(b));
    if fa.keys().ne(fb.keys()) {
        return Err("different file sets".into());
    }
    let differing: Vec<&String> = fa.iter().filter(|(k, v)| fb[*k] != **v).map(|(k, _)| k).collect();
    ensure(
        differing.is_empty() && fa.contains_key("tables.csv"),
        format!("{} files compared, differing: {differing:?}", fa.len()),
    )
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("temp dir");
    let workers = harness::workers_from_env().unwrap_or(1);
    let config = |dir: &Path| {
        let text = format!("[run]\noutput_dir = {:?}\n", dir.to_str().expect("utf-8 path"));
        parse_config(&text).expect("default config")
    };
    let (dir_a, dir_b) = (root.path().join("a"), root.path().join("b"));
    let cfg = config(&dir_a);

    println!("acceptance: full default suite, {workers} worker(s)");
    let report = harness::run(&cfg, workers).expect("suite runs");
    let tables = read_csv(fs::File::open(dir_a.join("tables.csv")).expect("tables.csv")).expect("tables parse");
    let suite =
        Suite { cfg: &cfg, report: &report, tables: tables.into_iter().map(|t| (t.experiment.clone(), t)).collect() };

    let mut results: Vec<(u32, &str, Check)> = vec![
        (1, "period oracle", c1_period(&suite)),
        (2, "radial exactness", c2_radial(&suite)),
        (3, "projection calculus", c3_projection(&suite)),
        (4, "kernel bound", c4_kernel(&suite)),
        (5, "HS scaling", c5_hs(&suite)),
        (6, "strong semigroup", convergence(&suite, "semigroup_strong", "quartic_well", &GRID4, true, Some(600.0))),
        (7, "weak time average", convergence(&suite, "weak_time_avg", "quadratic", &GRID4, true, None)),
        (8, "SPDE", c8_spde(&suite)),
        (9, "linear weak SPDE", convergence(&suite, "linear_weak", "quadratic", &GRID4, true, None)),
    ];

    let second = workers + 2;
    println!("acceptance: repeat with {second} worker(s)");
    let det =
        harness::run(&config(&dir_b), second).map_err(|e| e.to_string()).and_then(|_| c10_determinism(&dir_a, &dir_b));
    results.push((10, "determinism", det));

    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(msg) => println!("criterion {n:>2} PASS {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n:>2} FAIL {name}: {msg}");
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
