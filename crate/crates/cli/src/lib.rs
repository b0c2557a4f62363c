//! Command-line front end: argument parsing, file formats and plots.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod external;
pub mod io;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::{Cli, Command};
use crate::error::{CliError, CliResult};

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Ssmrcd(c) => commands::ssmrcd::run(c),
        Command::Fit(c) => commands::fit::run(c),
        Command::Tune(c) => commands::tune::run(c),
        Command::Simulate(c) => commands::simulate::run(c),
        Command::Plot(c) => commands::plot::run(c),
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    match cli.threads {
        Some(0) => Err(CliError::Input("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Input(format!("thread pool: {e}")))?
            .install(|| dispatch(cli)),
        None => dispatch(cli),
    }
}

/// Runs the tool on `args` (program name first) and returns the exit code.
pub fn run(args: Vec<OsString>) -> i32 {
    let args = match config::expand_args(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 2,
            };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
