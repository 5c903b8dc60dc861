//! `fedchain` — run scenarios, sweep gas costs and audit persisted runs.
//!
//! Exit codes: 0 success, 1 runtime or audit failure, 2 configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedchain::scenario::{self, ScenarioConfig, ScenarioError};

#[derive(Parser)]
#[command(name = "fedchain", version, about = "Blockchain-coordinated federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every round of a scenario and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Root directory; artifacts go to `<out>/<run-id>/`.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print the per-operation gas table for the given model sizes as CSV.
    GasSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = scenario::TABLE_SIZES)]
        sizes: Vec<u64>,
    },
    /// Re-verify a completed run directory.
    Audit {
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &ScenarioError) -> ExitCode {
    if err.is_config() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn execute(command: Command) -> Result<ExitCode, ScenarioError> {
    match command {
        Command::Run { config, out } => {
            let config = ScenarioConfig::load(&config)?;
            let outcome = scenario::run(&config, &out)?;
            let summary = &outcome.report.summary;
            println!("{}", outcome.dir.expect("run writes artifacts").display());
            log::info!(
                "{} rounds, {} paid, {} slashed, {} checkpoints",
                summary.rounds_closed,
                summary.total_paid,
                summary.total_slashed,
                outcome.report.checkpoints.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::GasSweep { config, sizes } => {
            let config = ScenarioConfig::load(&config)?;
            let rows = scenario::gas_sweep(&config, &sizes)?;
            print!("{}", scenario::gas_csv(&rows));
            Ok(ExitCode::SUCCESS)
        }
        Command::Audit { out } => {
            let report = scenario::audit(&out)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("audit report serializes"));
            if report.is_ok() {
                Ok(ExitCode::SUCCESS)
            } else {
                for finding in &report.findings {
                    log::error!("{finding}");
                }
                Ok(ExitCode::from(1))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDCHAIN_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
