//! Batch driver around `jkolab-core`: parse a problem description from
//! flags and an optional JSON file, run one of the four pipelines, leave
//! machine-readable artifacts in the output directory.
//!
//! Exit codes separate how a run can go wrong: 1 for a bad invocation,
//! 2 when the numerics fail outright (no convergence, reference too
//! coarse), 3 when everything computed but an inequality check is
//! violated, 4 for input/output failures. 0 means all assertions passed.

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

mod commands;
mod config;

fn main() -> ExitCode {
    let cli = match config::Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &jkolab_core::Error) -> u8 {
    use jkolab_core::Error::*;
    match err {
        InvalidGrid(_) | InvalidInput(_) | InvalidDensity(_) => 1,
        NonConvergence { .. }
        | MonotonicityLoss(_)
        | SmallnessViolated(_)
        | InsufficientData(_)
        | OracleTooCoarse(_) => 2,
        Io(_) | Json(_) => 4,
    }
}
