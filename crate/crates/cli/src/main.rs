//! `tsm`: data generation, training, simulation and evaluation.

mod args;
mod commands;
mod config;
mod manifest;
mod session;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use config::UsageError;
use tsm_core::TsmError;

fn configure_threads(strict: bool) -> anyhow::Result<()> {
    let n = match std::env::var("TSM_NUM_THREADS") {
        Ok(v) => Some(
            v.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| config::usage(format!("TSM_NUM_THREADS must be a positive integer, got `{v}`")))?,
        ),
        Err(_) => None,
    };
    let n = if strict { Some(1) } else { n };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    configure_threads(cli.strict_deterministic)?;
    let s = cli.strict_deterministic;
    match &cli.command {
        Command::Datagen(a) => commands::datagen(a, s),
        Command::Train(a) => commands::train(a, s),
        Command::Simulate(a) => commands::simulate(a, s),
        Command::Evaluate(a) => commands::evaluate(a, s),
        Command::Spectrum(a) => commands::spectrum(a, s),
        Command::Compare(a) => commands::compare(a, s),
    }
}

/// Machine-readable code and exit status of a failure.
fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return ("E_USAGE", 2);
        }
        if let Some(e) = cause.downcast_ref::<TsmError>() {
            let status = if matches!(e, TsmError::InvalidArgument(_)) { 2 } else { 1 };
            return (e.code(), status);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ("E_IO", 1);
        }
    }
    ("E_RUNTIME", 1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, status) = classify(&e);
            eprintln!("tsm: error[{code}]: {e:#}");
            ExitCode::from(status)
        }
    }
}
