//! Experiment runner: dataset generation, training sweeps, capacity and
//! spectrum analyses, and a two-node distributed demo. Every run writes a
//! manifest (resolved config, versions, artifact hashes) next to its outputs.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use dqml_core::circuits::SchemeKind;
use serde::{Deserialize, Serialize};

pub use config::ExperimentConfig;
pub use manifest::{Artifact, Manifest, RunStatus};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical check failed: {0}")]
    Numerical(String),
    #[error(transparent)]
    Core(#[from] dqml_core::Error),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use dqml_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Json(_) => 1,
            CliError::Core(
                E::InvalidArgument(_)
                | E::InvalidModel(_)
                | E::Unsupported(_)
                | E::DimensionMismatch { .. }
                | E::TooManyQubits { .. }
                | E::Empty(_)
                | E::Io(_)
                | E::Json(_),
            ) => 1,
            CliError::Core(_) | CliError::Numerical(_) => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Subcommand, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    /// Generate a synthetic clustered dataset (CSV plus JSON sidecar).
    GenData,
    /// Train classifiers over schemes x L x trials.
    Train,
    /// Effective dimension (maximum Fisher rank) sweeps.
    Effdim,
    /// Fisher eigenvalue spectra and their log-spread.
    Spectrum,
    /// Run models on two nodes over loopback TCP and compare with the single-register result.
    DistDemo,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::GenData => "gen-data",
            CommandKind::Train => "train",
            CommandKind::Effdim => "effdim",
            CommandKind::Spectrum => "spectrum",
            CommandKind::DistDemo => "dist-demo",
        }
    }
}

/// Parses `3`, `1,2,5` items and inclusive ranges such as `1-10`.
pub fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match tok.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| format!("bad range '{tok}'"))?;
                let b: usize = b.trim().parse().map_err(|_| format!("bad range '{tok}'"))?;
                if a > b {
                    return Err(format!("empty range '{tok}'"));
                }
                out.extend(a..=b);
            }
            None => out.push(tok.parse().map_err(|_| format!("bad integer '{tok}'"))?),
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}

pub fn parse_scheme_list(s: &str) -> Result<Vec<SchemeKind>, String> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(|t| t.parse().map_err(|e| format!("{e}"))).collect()
}

#[derive(Debug, Parser)]
#[command(name = "dqml", version, about = "Distributed quantum classifier experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<CommandKind>,
    /// JSON config file; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset seed, trial seed base, or parameter-set seed (effdim, spectrum)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: out)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated schemes: non, nc, cc, qc.
    #[arg(long, global = true)]
    pub scheme: Option<String>,
    /// Comma-separated sub-layer counts; ranges like 1-10 are allowed.
    #[arg(long = "L", global = true)]
    pub sublayers: Option<String>,
    /// Independent training trials per scheme and L
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Optimizer iterations per trial
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    /// Keep the interpret weights at parity during training.
    #[arg(long, global = true)]
    pub parity_fixed: bool,
    /// Single pooling stage that measures all but one qubit per QPU, local feedforward only
    #[arg(long, global = true)]
    pub dumb_pooling: bool,
    /// Loopback TCP port for dist-demo (0 picks a free port).
    #[arg(long, global = true)]
    pub port: Option<u16>,
    /// Re-run the command recorded in a manifest and check that every
    /// artifact is reproduced byte for byte.
    #[arg(long, global = true)]
    pub resume: Option<PathBuf>,
}

/// Outcome of a completed run.
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
    pub summary: String,
}

pub fn run_cli(cli: &Cli) -> CliResult<RunOutcome> {
    if let Some(path) = &cli.resume {
        return manifest::resume(path);
    }
    let command = cli.command.ok_or_else(|| CliError::Config("no command given (see --help)".into()))?;
    let cfg = config::resolve(command, cli)?;
    manifest::execute(command, cfg, None)
}
