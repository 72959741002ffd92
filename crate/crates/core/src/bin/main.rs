// SPDX-License-Identifier: Apache-2.0

use clap::{Parser, Subcommand};
use enclave_migrate::harness::{bench, corpus, run, Mode, ReportFormat, RunOptions, Script};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "enclave-migrate", version, about = "Simulated enclave migration: scenarios and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file, or a bundled scenario by name.
    Run {
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// full or baseline. Defaults to the scenario's mode, else full.
        #[arg(long)]
        mode: Option<Mode>,
        /// text or json.
        #[arg(long, default_value = "text")]
        report: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the microbenchmarks.
    Bench {
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Writes JSON here; text goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the bundled scenarios.
    ListScenarios,
}

fn load(scenario: &str) -> Result<String, String> {
    let path = std::path::Path::new(scenario);
    if path.exists() {
        return std::fs::read_to_string(path).map_err(|e| format!("{scenario}: {e}"));
    }
    corpus::find(scenario)
        .map(str::to_owned)
        .ok_or_else(|| format!("{scenario}: no such file or bundled scenario (see list-scenarios)"))
}

/// Writes to stdout, treating a closed pipe as success.
fn stdout(text: &str) -> Result<(), String> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.to_string()),
        _ => Ok(()),
    }
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), String> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => stdout(text),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, seed, mode, report, out } => (|| {
            let text = load(&scenario)?;
            let script = Script::parse(&text).map_err(|e| format!("{scenario}: {e}"))?;
            let rep = run(&script, RunOptions { seed, mode }).map_err(|e| e.to_string())?;
            emit(&rep.render(report), out.as_ref())?;
            for a in rep.failed_asserts() {
                eprintln!("failed assert #{} {}: expected {} got {}", a.index, a.check, a.expected, a.actual);
            }
            Ok(rep.passed)
        })(),
        Command::Bench { iterations, seed, out } => (|| {
            let suite = bench::run(iterations, seed).map_err(|e| e.to_string())?;
            stdout(&suite.to_text())?;
            if let Some(p) = out {
                std::fs::write(&p, suite.to_json()).map_err(|e| format!("{}: {e}", p.display()))?;
            }
            suite.check().map(|_| true)
        })(),
        Command::ListScenarios => {
            let mut listing = String::new();
            for (name, text) in corpus::SCENARIOS {
                let modes = Script::parse(text)
                    .map(|s| corpus::modes(&s).iter().map(|m| m.name()).collect::<Vec<_>>().join(","))
                    .unwrap_or_else(|e| format!("invalid: {e}"));
                listing.push_str(&format!("{name:<26} {modes}\n"));
            }
            stdout(&listing).map(|_| true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
