use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use reebflow::harness::{self, catalog, config};

/// Exit code when a verdict fails or an experiment errors.
const EXIT_FAIL: u8 = 1;
/// Exit code for configuration and I/O problems.
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "reebflow", version, about = "Averaging experiments for fast Hamiltonian advection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments selected by a TOML config.
    Run { config: PathBuf },
    /// List experiment ids.
    ListExperiments,
    /// Show an experiment's description, verdict rule and default parameters.
    Describe { id: String },
    /// Check a config without running anything.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::ListExperiments => {
            let text: String = catalog::CATALOG.iter().map(|i| format!("{:<20} {}\n", i.id, i.title)).collect();
            emit(&text);
            ExitCode::SUCCESS
        }
        Command::Describe { id } => match catalog::find(&id) {
            Some(info) => {
                emit(&format!(
                    "{}\n\n{}\n\nrule: {}\n\ndefaults:{}",
                    info.title, info.description, info.rule, info.defaults
                ));
                ExitCode::SUCCESS
            }
            None => {
                eprintln!("unknown experiment `{id}`; see list-experiments");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::Validate { config } => match config::load_config(&config) {
            Ok(cfg) => {
                let ids: Vec<&str> = cfg.experiments.iter().map(|(i, _)| i.id).collect();
                println!("ok: {} experiment(s): {}", ids.len(), ids.join(", "));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("invalid config: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::Run { config } => run(&config),
    }
}

/// Stdout write that tolerates a closed pipe (`reebflow describe x | head`).
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn run(path: &std::path::Path) -> ExitCode {
    let cfg = match config::load_config(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("invalid config: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let workers = match harness::workers_from_env() {
        Ok(n) => n,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let report = match harness::run(&cfg, workers) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    for r in &report.records {
        match (&r.verdict, &r.error) {
            (Some(v), _) if v.pass => println!("PASS {:<20} {:>8.1}s", r.id, r.seconds),
            (Some(v), _) => println!("FAIL {:<20} {:>8.1}s  {}", r.id, r.seconds, v.detail),
            (None, Some(e)) => println!("ERR  {:<20} {:>8.1}s  {e}", r.id, r.seconds),
            (None, None) => unreachable!(),
        }
    }
    println!("results in {}", cfg.output_dir.display());
    if report.all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAIL)
    }
}
