//! `unidiff`: dataset generation, staged training, sampling, evaluation and
//! benchmarks for the multi-task diffusion transformer.
//!
//! Exit codes: 0 on success, 1 for usage, configuration and I/O errors,
//! 2 when a numeric failure (non-finite loss or activation) stops a run.

mod bench;
mod data;
mod eval;
mod manifest;
mod sample;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use manifest::RunManifest;

pub const THREADS_ENV: &str = "UNIDIFF_THREADS";

#[derive(Parser, Debug)]
#[command(name = "unidiff", version, about = "Multi-task diffusion transformer on a synthetic shapes world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write task samples as PPM/PGM files with a JSON-lines index.
    GenData(data::Args),
    /// Run training stages from a config or resume from a checkpoint.
    Train(train::Args),
    /// Generate one image from a checkpoint.
    Sample(sample::Args),
    /// Score a checkpoint (or the oracle) on an evaluation suite.
    Eval(eval::Args),
    /// Time forward passes per task and conditioning mode.
    Bench(bench::Args),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Sample(_) => "sample",
            Command::Eval(_) => "eval",
            Command::Bench(_) => "bench",
        }
    }

    fn out(&self) -> &PathBuf {
        match self {
            Command::GenData(a) => &a.out,
            Command::Train(a) => &a.out,
            Command::Sample(a) => &a.out,
            Command::Eval(a) => &a.out,
            Command::Bench(a) => &a.out,
        }
    }
}

fn threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => bail!("{THREADS_ENV} must be a positive integer, got `{v}`"),
        },
    }
}

/// Maps an error to its exit code: 2 for numeric failures, else 1.
fn exit_code(e: &anyhow::Error) -> u8 {
    let numeric = e
        .chain()
        .any(|c| c.downcast_ref::<unidiff::Error>().is_some_and(unidiff::Error::is_numeric));
    if numeric {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let threads = match threads() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let mut m = RunManifest::start(cli.command.name(), argv, threads);
    let out = cli.command.out().clone();
    let result = match &cli.command {
        Command::GenData(a) => data::run(a, &mut m),
        Command::Train(a) => train::run(a, threads, &mut m),
        Command::Sample(a) => sample::run(a, &mut m),
        Command::Eval(a) => eval::run(a, threads, &mut m),
        Command::Bench(a) => bench::run(a, &mut m),
    };
    m.status = match &result {
        Ok(()) => "ok".into(),
        Err(e) => format!("error: {e:#}"),
    };
    let written = m.write(&out);
    match (result, written) {
        (Ok(()), Ok(_)) => ExitCode::SUCCESS,
        (Err(e), _) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        (Ok(()), Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
