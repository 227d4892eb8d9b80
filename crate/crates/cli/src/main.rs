//! `stabfem`: build φ tables, run single solves and benchmark suites.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure.

mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "stabfem", version, about = "Stabilized finite elements for advection-diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate φ at every table node and write the table plus its trace.
    BuildTable(commands::BuildTableArgs),
    /// Solve one problem from the catalog.
    Solve(commands::SolveArgs),
    /// Run a benchmark suite and write its CSV.
    Bench(commands::BenchArgs),
    /// Print a table's axes, metadata and interpolated values.
    InspectTable(commands::InspectArgs),
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use stabfem::Error as E;
    let numerical = e.chain().any(|c| {
        matches!(
            c.downcast_ref::<E>(),
            Some(E::Solver { .. } | E::Calibration { .. } | E::TableNode { .. } | E::NonFinite { .. })
        )
    });
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::BuildTable(a) => commands::build_table(a),
        Command::Solve(a) => commands::solve(a),
        Command::Bench(a) => commands::bench(a),
        Command::InspectTable(a) => commands::inspect_table(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
