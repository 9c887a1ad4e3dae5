//! Command-line surface over the solver library.
//!
//! Subcommands: `validate`, `fit`, `predict`, `evaluate`, `simulate`.
//! Exit codes: 0 success, 1 validation/usage error, 2 convergence failure
//! (a model file is still written, with the warning recorded inside).

pub mod artifact;
pub mod commands;
pub mod config;
pub mod envspec;
pub mod ingest;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::DataArgs;

#[derive(Parser, Debug)]
#[command(name = "dtr", version, about = "Offline policy learning for sequential treatment decisions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a stacked trajectory dataset and report positivity diagnostics.
    Validate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        actions: PathBuf,
        #[arg(long)]
        rewards: PathBuf,
        /// Number of trajectories.
        #[arg(long)]
        n: usize,
        /// Decision points per trajectory.
        #[arg(long)]
        stages: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit a model (method chosen in the config file) and write the artifact.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        actions: PathBuf,
        #[arg(long)]
        rewards: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        stages: usize,
        #[arg(long)]
        config: PathBuf,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Action probabilities and the recommended treatment for one state.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated state vector, e.g. "200,90,0".
        #[arg(long)]
        state: String,
    },
    /// Monte-Carlo comparison of the fitted policy against behavior and
    /// uniform baselines on a simulated environment.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the delimited table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate an offline dataset from a configured environment and write
    /// it in the stacked layout.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        stages: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Prefix for {prefix}_states.csv, {prefix}_actions.csv,
        /// {prefix}_rewards.csv.
        #[arg(long)]
        out: String,
    },
}

/// Run a parsed command, writing human/machine-readable output to `out`.
/// Returns the process exit code.
pub fn run(cli: Cli, out: &mut impl Write) -> Result<i32> {
    match cli.command {
        Command::Validate {
            data,
            actions,
            rewards,
            n,
            stages,
            config,
        } => commands::validate(
            &DataArgs {
                data,
                actions,
                rewards,
                n,
                stages,
            },
            config.as_deref(),
            out,
        ),
        Command::Fit {
            data,
            actions,
            rewards,
            n,
            stages,
            config,
            out: out_path,
            seed,
        } => commands::fit(
            &DataArgs {
                data,
                actions,
                rewards,
                n,
                stages,
            },
            &config,
            &out_path,
            seed,
            out,
        ),
        Command::Predict { model, state } => commands::predict(&model, &state, out),
        Command::Evaluate {
            model,
            config,
            seed,
            out: out_file,
        } => commands::evaluate(&model, &config, seed.unwrap_or(0), out_file.as_deref(), out),
        Command::Simulate {
            config,
            n,
            stages,
            seed,
            out: prefix,
        } => commands::simulate(&config, n, stages, seed.unwrap_or(0), &prefix, out),
    }
}

/// Parse argv-style arguments and run; the test harness entry point.
pub fn run_from<I, T>(args: I, out: &mut impl Write) -> Result<i32>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    run(cli, out)
}
