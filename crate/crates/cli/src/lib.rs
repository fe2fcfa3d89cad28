//! `mcn` command-line tool: dataset generation, training, evaluation,
//! inference, overlays, benchmarks and run manifests.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad arguments or
//! configuration.

pub mod args;
mod commands;
pub mod manifest;
pub mod overlay;

use std::ffi::OsString;
use std::fmt;

use clap::Parser;

pub use commands::{config_path, person_only, run_command, DATASET_FILE, METRICS_FILE, MODEL_FILE, OVERLAY_FILE, PREDICTION_FILE};

/// A flag or configuration problem the user can fix by changing the
/// command line.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    let usage = err.chain().any(|e| {
        e.is::<UsageError>() || matches!(e.downcast_ref::<mcn_core::Error>(), Some(mcn_core::Error::Config(_)))
    });
    if usage {
        2
    } else {
        1
    }
}

/// Parses `argv`, runs the command and reports errors on stderr.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run_command(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
