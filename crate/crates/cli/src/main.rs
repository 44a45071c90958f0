mod args;
mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    let (seed, verbose) = (cli.seed, cli.verbose);
    pool.install(|| match cli.command {
        Command::Segment(a) => commands::segment(&a, verbose),
        Command::Eval(a) => commands::eval(&a),
        Command::Diagnose(a) => commands::diagnose(&a, seed, verbose),
        Command::Synth(a) => commands::synth(&a, seed),
        Command::Sweep(a) => commands::sweep(&a, seed, verbose),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
