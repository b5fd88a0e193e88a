use std::process::ExitCode;

use clap::Parser;

mod analyze;
mod args;
mod decompose;
mod output;
mod train;
mod verify;

use args::{Cli, Command};
use output::Failure;

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("STRUCTCONV_THREADS") else { return Ok(()) };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(format!("STRUCTCONV_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Verify(a) => verify::run(&a),
        Command::Analyze(a) => analyze::run(&a),
        Command::Decompose(a) => decompose::run(&a),
        Command::TrainToy(a) => train::run(&a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
