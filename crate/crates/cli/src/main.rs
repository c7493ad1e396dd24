//! `hingeplace` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_INFEASIBLE: u8 = 4;

/// Error reported on stderr as a JSON document.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: String,
    pub message: String,
    pub code: u8,
}

impl CliError {
    pub fn new(code: u8, kind: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            message: message.into(),
            code,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, "config", message)
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(EXIT_INPUT, "input", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(EXIT_INTERNAL, "internal", message)
    }
}

impl From<hingeplace::Error> for CliError {
    fn from(e: hingeplace::Error) -> Self {
        use hingeplace::Error as E;
        let code = match &e {
            E::InvalidParameter(_) | E::Domain(_) | E::Precondition(_) => EXIT_CONFIG,
            E::DimensionMismatch { .. } | E::Format(_) | E::Io(_) | E::Json(_) | E::Csv(_) => EXIT_INPUT,
            E::Numerical(_) | E::MissingDuals => EXIT_INTERNAL,
        };
        Self::new(code, e.kind(), e.to_string())
    }
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config file.
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    /// Override a config key, `KEY=VALUE` with dotted keys for nesting.
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output path (directory for `verify`).
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(name = "hingeplace", version, about = "Electrode-montage design on a layered sphere head")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Assemble a forward model and region document.
    Forward(Common),
    /// Solve one montage-design program.
    Solve(Common),
    /// Run an equivalence sweep and write its tables.
    Verify(Common),
    /// Focality metrics of a montage over a forward model.
    Metrics(Common),
    /// Focality study of HingePlace against LCMV-E.
    Sweep(Common),
}

fn sources(c: Common, out_key: &str) -> config::Sources {
    let mut sets = c.sets;
    if let Some(o) = c.out {
        let v = serde_json::Value::String(o.to_string_lossy().into_owned());
        sets.push(format!("{out_key}={v}"));
    }
    config::Sources::from_process(c.config, sets)
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    match cli.command {
        Command::Forward(c) => commands::forward(&config::resolve(&sources(c, "out"))?),
        Command::Solve(c) => commands::solve(&config::resolve(&sources(c, "out"))?),
        Command::Verify(c) => commands::verify(&config::resolve(&sources(c, "out_dir"))?),
        Command::Metrics(c) => commands::metrics(&config::resolve(&sources(c, "out"))?),
        Command::Sweep(c) => commands::sweep(&config::resolve(&sources(c, "out"))?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::config(e.to_string().trim_end().to_string());
            eprintln!("{}", serde_json::json!({ "error": err }));
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", serde_json::json!({ "error": err }));
            ExitCode::from(err.code)
        }
    }
}
