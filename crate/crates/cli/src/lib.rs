//! Command-line driver: dataset generation, staged training, evaluation and the
//! end-to-end comparison experiment.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod ledger;
pub mod pipeline;

use std::ffi::OsString;

use clap::Parser;

pub use commands::{Cli, OUT_ROOT_ENV};
pub use error::{exit, CliError, ErrorKind};

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return exit::OK;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("usage error")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::new(ErrorKind::Usage, first).to_line());
            return exit::USAGE;
        }
    };
    match commands::execute(cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("{}", e.to_line());
            e.code()
        }
    }
}
