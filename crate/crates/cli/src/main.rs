mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Failure;

const THREADS_VAR: &str = "RF_EQUIV_THREADS";

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = match raw.trim().parse() {
        Ok(n) if n >= 1 => n,
        _ => return Err(Failure::Usage(format!("{THREADS_VAR} must be a positive integer, got {raw:?}"))),
    };
    build_pool(n)
}

#[cfg(feature = "parallel")]
fn build_pool(n: usize) -> Result<(), Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot size the worker pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
fn build_pool(_n: usize) -> Result<(), Failure> {
    Ok(())
}

fn out_path(cmd: &Command) -> Option<&std::path::Path> {
    match cmd {
        Command::EstimateKernels(a) => a.out.as_deref(),
        Command::Predict(a) => a.out.as_deref(),
        Command::Simulate(a) | Command::Compare(a) => a.out.as_deref(),
        Command::Sweep(a) => a.out.as_deref(),
        Command::Diagnose(a) => a.out.as_deref(),
    }
}

fn run(cmd: &Command) -> commands::Outcome {
    configure_threads()?;
    match cmd {
        Command::EstimateKernels(a) => commands::estimate_kernels(a),
        Command::Predict(a) => commands::predict(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Compare(a) => commands::compare(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Diagnose(a) => commands::diagnose(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error [{}]: {}", f.name(), f.message());
            if let Some(out) = out_path(&cli.command) {
                commands::write_failure(out, &f);
            }
            ExitCode::from(f.exit_code())
        }
    }
}
