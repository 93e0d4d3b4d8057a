mod args;
mod commands;
mod config;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use args::{Cli, Command};

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Protocol(a) => commands::protocol(a),
        Command::Trace(a) => commands::trace(a),
        Command::Compare(a) => commands::compare(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
    }
}

fn main_inner() -> Result<()> {
    let argv = config::expand_args(std::env::args_os().collect())?;
    let cli = Cli::try_parse_from(argv).unwrap_or_else(|e| e.exit());
    match cli.threads {
        Some(0) => anyhow::bail!("--threads must be at least 1"),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building thread pool")?
            .install(|| run(&cli)),
        None => run(&cli),
    }
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
