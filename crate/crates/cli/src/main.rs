//! `condlora` command-line driver.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numeric error
//! (including a failed gradient check).

mod analyze;
mod bench;
mod common;
mod count;
mod gradcheck;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "condlora",
    version,
    about = "LoRA / CondLoRA adapter workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print trainable-parameter counts for both methods.
    CountParams(count::Args),
    /// Train one adapter method and write report, checkpoints and summary.
    Train(train::Args),
    /// Conversion-matrix grids, random baseline and adapter comparison.
    Analyze(analyze::Args),
    /// Measure training throughput of both methods.
    Bench(bench::Args),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(gradcheck::Args),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::CountParams(args) => count::run(&args),
        Command::Train(args) => train::run(&args),
        Command::Analyze(args) => analyze::run(&args),
        Command::Bench(args) => bench::run(&args),
        Command::Gradcheck(args) => gradcheck::run(&args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(common::exit_code(&e))
        }
    }
}
