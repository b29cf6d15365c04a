//! `hybridsched`: simulate hybrid HPC-quantum workloads under different
//! allocation strategies.
//!
//! Exit codes: 0 success, 1 configuration error, 2 validation or parse
//! error, 3 simulation fault. Errors go to standard error as one JSON object,
//! except job script errors, which are printed as `<file>:<line>: <Kind>`.

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{ConfigArgs, OutputArgs};
use config::Format;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "hybridsched", version, about = "Hybrid HPC-quantum cluster scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one strategy on a configured scenario.
    Simulate {
        /// Overrides `strategy.name` from the config.
        #[arg(long)]
        strategy: Option<String>,
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Run several strategies on the same workload and compare them.
    Compare {
        /// Comma-separated strategy names (at least two).
        #[arg(long, value_delimiter = ',', required = true)]
        strategies: Vec<String>,
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Reproduce the single-job imbalance scenario for a QPU technology.
    PaperScenario {
        /// superconducting or neutral-atoms
        tech: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Parse a hybrid job script and print its resource requests.
    Parse {
        script: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Simulate { strategy, args } => commands::cmd_simulate(args, strategy.as_deref()),
        Command::Compare { strategies, args } => commands::cmd_compare(args, strategies),
        Command::PaperScenario { tech, seed, output } => commands::cmd_paper_scenario(tech, *seed, output),
        Command::Parse { script, format } => commands::cmd_parse(script, *format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Parse(lines) => eprintln!("{lines}"),
                _ => eprintln!("{}", e.to_json()),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
