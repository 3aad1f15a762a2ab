//! Command-line front end for the TFDW solver suite.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::Value;

use crate::commands::Context;
use crate::config::StudyConfig;
pub use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "tfdw", version, about = "Spin-polarized TFDW studies on periodic crystals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON study configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: the config's `out`, else `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for randomized initial states; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "TFDW_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Ground state of the unit cell at a constant field.
    SolveCell,
    /// Closed-form jellium spectra and the spin-wave threshold.
    JelliumScan,
    /// Fiber gaps of a cell solution, optionally on supercells.
    StabilityScan,
    /// Cauchy-Born table over a range of constant fields.
    CbTable,
    /// Two-scale ansatz on each supercell.
    TwoScaleBuild,
    /// Frozen-Jacobian Newton from the ansatz on each supercell.
    NewtonStudy,
    /// Full sweep over supercell sizes with fitted slopes.
    EpsStudy,
    /// Compare the Cauchy-Born energy with its constrained dual.
    LegendreCheck,
}

impl Command {
    fn needs_config(self) -> bool {
        self != Command::JelliumScan
    }
}

/// Run a parsed invocation and return the summary printed on success.
pub fn run(cli: &Cli) -> Result<Value, CliError> {
    let config = match &cli.config {
        Some(p) => StudyConfig::load(p)?,
        None if cli.command.needs_config() => return Err(CliError::Config("--config is required for this command".into())),
        None => StudyConfig::parse("{}")?,
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        // a global pool can only be installed once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Context {
        config,
        out,
        seed: cli.seed,
        verbose: cli.verbose,
    };
    match cli.command {
        Command::SolveCell => commands::solve_cell_cmd(&ctx),
        Command::JelliumScan => commands::jellium_scan_cmd(&ctx),
        Command::StabilityScan => commands::stability_scan_cmd(&ctx),
        Command::CbTable => commands::cb_table_cmd(&ctx),
        Command::TwoScaleBuild => commands::two_scale_build_cmd(&ctx),
        Command::NewtonStudy => commands::newton_study_cmd(&ctx),
        Command::EpsStudy => commands::eps_study_cmd(&ctx),
        Command::LegendreCheck => commands::legendre_check_cmd(&ctx),
    }
}
