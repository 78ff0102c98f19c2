//! `imps`: infinite MPS ground states of long-range chains from the command
//! line.

mod analyze;
mod config;
mod output;
mod solve;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration: exit 2.
    Usage(String),
    /// Non-convergence, failed invariant or numerical breakdown: exit 1.
    Failure(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {}", m),
            CliError::Failure(m) => write!(f, "failure: {}", m),
        }
    }
}

impl From<imps_core::error::ImpsError> for CliError {
    fn from(e: imps_core::error::ImpsError) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(format!("i/o: {}", e))
    }
}

#[derive(Parser, Debug)]
#[command(name = "imps", version, about = "Infinite MPS ground states of long-range 1D lattice models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `[output] dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chi: Option<usize>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one model to convergence.
    Solve {
        #[command(flatten)]
        common: Overrides,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Independent solves over a (t, mu) grid.
    Sweep {
        #[command(flatten)]
        common: Overrides,
        /// Parallel workers (default: IMPS_WORKERS, else all cores).
        #[arg(long, env = "IMPS_WORKERS")]
        workers: Option<usize>,
    },
    /// Observables of a checkpointed state.
    Analyze {
        /// Checkpoint written by `solve`.
        checkpoint: PathBuf,
        /// energy | entropy | period | spectrum[:N] | profile[:LEN] |
        /// corr:A-B:R1..R2[:connected] | luttinger:R1..R2[:RHO0]
        #[arg(long = "request", short = 'r', required = true)]
        requests: Vec<String>,
        /// Write one file per request here instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dense-oracle and property checks.
    Validate {
        /// Print the available checks and exit.
        #[arg(long)]
        list: bool,
        /// Run only these checks.
        #[arg(long = "check")]
        checks: Vec<String>,
        /// Deliberately corrupt an input (for testing the checks themselves).
        #[arg(long, hide = true)]
        inject: Option<String>,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve { common, resume } => solve::cmd_solve(&common, resume.as_deref()),
        Command::Sweep { common, workers } => solve::cmd_sweep(&common, workers),
        Command::Analyze { checkpoint, requests, out } => analyze::cmd_analyze(&checkpoint, &requests, out.as_deref()),
        Command::Validate { list, checks, inject } => validate::cmd_validate(list, &checks, inject.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("imps: {}", e);
            ExitCode::from(e.code())
        }
    }
}
