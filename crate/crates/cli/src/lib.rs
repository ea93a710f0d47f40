//! Command-line front end for the `binconv` estimators and studies.
//!
//! The binary in `main.rs` is a thin wrapper around [`run`]; the command
//! functions are public so tests can drive them without a subprocess.

pub mod args;
pub mod compare;
pub mod config;
pub mod dataset;
pub mod estimate;
pub mod generate;
pub mod provenance;
pub mod simulate;

use std::fmt;

pub use args::{Cli, Command};

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const OUTPUT: i32 = 1;
    pub const INPUT: i32 = 2;
    pub const ESTIMATION: i32 = 3;
}

#[derive(Debug)]
pub enum Failure {
    /// Unreadable or invalid input file, config or flag combination.
    Input(String),
    /// An estimator failed on the full dataset.
    Estimation(String),
    /// Writing results failed.
    Output(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => exit::INPUT,
            Failure::Estimation(_) => exit::ESTIMATION,
            Failure::Output(_) => exit::OUTPUT,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) => write!(f, "input error: {m}"),
            Failure::Estimation(m) => write!(f, "estimation failed: {m}"),
            Failure::Output(m) => write!(f, "output error: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

pub type CliResult<T> = Result<T, Failure>;

pub(crate) fn output_err(e: impl fmt::Display) -> Failure {
    Failure::Output(e.to_string())
}

/// Runs one parsed command on a rayon pool of the requested size.
pub fn run(cli: Cli) -> CliResult<()> {
    let threads = cli.command.parallelism().unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Input(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(|| match cli.command {
        Command::Estimate(a) => estimate::cmd_estimate(&a),
        Command::Simulate(a) => simulate::cmd_simulate(&a).map(|_| ()),
        Command::Compare(a) => compare::cmd_compare(&a),
        Command::Influence(a) => compare::cmd_influence(&a),
        Command::Generate(a) => generate::cmd_generate(&a),
    })
}

/// Writes `text` to `path`, or to stdout when no path is given.
pub(crate) fn emit(path: Option<&std::path::Path>, text: &str) -> CliResult<()> {
    use std::io::Write;
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| output_err(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(output_err)?;
            out.flush().map_err(output_err)
        }
    }
}
