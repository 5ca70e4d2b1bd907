//! Command-line front end: one JSON config in, `report.json` and CSV
//! artifacts out.
//!
//! Exit codes: [`EXIT_OK`] when every certificate passes, [`EXIT_FAILED`]
//! on a gap, superhedge or oracle failure, [`EXIT_INFEASIBLE`] when the
//! marginals admit no embedding, [`EXIT_ERROR`] otherwise.

pub mod config;
mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{LatticeConfig, LoadedConfig, MarginalSource, MonteCarloConfig, OracleConfig, RunConfig};
pub use run::{
    bounds, check_peacock, export_lp, oracle, solve, Certificates, InstanceSection, OracleCheck, Outcome, Report,
    SUPERHEDGE_TOL_EXHAUSTIVE, SUPERHEDGE_TOL_SAMPLED,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAILED: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "skorokhod",
    version,
    about = "Optimal Skorokhod embeddings with multiple marginals"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check that the marginals are centered and increasing in convex order.
    CheckPeacock {
        /// Run config, or a bare JSON list of marginals.
        input: PathBuf,
    },
    /// Solve the embedding problem: primal LP, dual descent, certificates.
    Solve {
        config: PathBuf,
        /// Overrides `output_dir` of the config.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Upper and lower model-free price bounds of a transport payoff.
    Bounds {
        config: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Primal solve compared with the independent reference values.
    Oracle {
        config: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write the primal LP in CPLEX LP format.
    ExportLp {
        config: PathBuf,
        /// Defaults to `problem.lp` in the output directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(o) => {
            println!("{}", o.summary);
            o.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

pub fn execute(cmd: &Command) -> crate::Result<Outcome> {
    match cmd {
        Command::CheckPeacock { input } => check_peacock(input),
        Command::Solve { config, out } => solve(&load(config, out)?),
        Command::Bounds { config, out } => bounds(&load(config, out)?),
        Command::Oracle { config, out } => oracle(&load(config, out)?),
        Command::ExportLp { config, output } => export_lp(&LoadedConfig::load(config)?, output.as_deref()),
    }
}

fn load(path: &std::path::Path, out: &Option<PathBuf>) -> crate::Result<LoadedConfig> {
    let mut cfg = LoadedConfig::load(path)?;
    if let Some(o) = out {
        // Relative overrides are taken from the working directory.
        cfg.config.output_dir = Some(std::env::current_dir()?.join(o));
    }
    Ok(cfg)
}
