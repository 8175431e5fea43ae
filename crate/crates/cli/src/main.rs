//! `triadground` command-line tool.

mod commands;
mod error;
mod files;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};
use triadground::corpus_io::FORMAT_VERSION;

use commands::Cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let version = format!("{} (checkpoint format {FORMAT_VERSION})", env!("CARGO_PKG_VERSION"));
    let parsed = Cli::command()
        .version(&*Box::leak(version.into_boxed_str()))
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(error::EXIT_FAILURE as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
