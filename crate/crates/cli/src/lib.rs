//! Command-line front end: scenario files in, verdicts and reports out.

pub mod builtins;
pub mod expr;
pub mod report;
pub mod runner;
pub mod scenario;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::expr::ParseError;
use crate::report::RunReport;
use crate::runner::Overrides;
use crate::scenario::Format;

/// Configuration and input errors. All of them exit with status 2.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("parse error in {0}: {1}")]
    Parse(String, ParseError),
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("no scenario file or built-in named {0:?}")]
    NotFound(String),
    #[error(transparent)]
    Model(#[from] timekeeper::Error),
}

#[derive(Debug, Parser)]
#[command(name = "timekeeper", version, about = "Check candidate time observables against Hamiltonian flows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file or a built-in example.
    Run {
        /// Path to a scenario JSON file, or the name of a built-in.
        target: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for report.json and trajectory CSV files.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Overrides the tolerance of every check.
        #[arg(long)]
        tol: Option<f64>,
        /// Overrides the integration horizon.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// List the built-in examples.
    ListExamples,
}

/// Loads, prepares and executes a scenario.
pub fn run_target(target: &str, overrides: &Overrides) -> Result<(RunReport, Format), CliError> {
    let (scenario, source, base) = runner::load(target)?;
    let prepared = runner::prepare(scenario, source, &base, overrides)?;
    let report = runner::execute(&prepared)?;
    Ok((report, prepared.format))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::ListExamples => {
            print!("{}", builtins::list_examples());
            0
        }
        Command::Run { target, seed, out, format, tol, horizon } => {
            let overrides = Overrides { seed, out, format, tol, horizon };
            match run_target(&target, &overrides) {
                Ok((report, format)) => {
                    match format {
                        Format::Json => println!("{}", report.to_json()),
                        Format::Text => print!("{}", report.to_text()),
                    }
                    if report.passed {
                        0
                    } else {
                        1
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    2
                }
            }
        }
    }
}
