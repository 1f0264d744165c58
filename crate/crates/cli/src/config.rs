//! Run configuration: one JSON document, every field optional, flags override.

use std::path::PathBuf;

use dqml_core::circuits::{PoolingKind, SchemeKind};
use dqml_core::datagen::DatasetConfig;
use dqml_core::distexec::ExecMode;
use dqml_core::fisher::{FisherMode, RANK_TOL_REL};
use dqml_core::training::{InterpretMode, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::{parse_scheme_list, parse_usize_list, Cli, CliError, CliResult, CommandKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset seed for gen-data/train/dist-demo, trial seed base for train,
    /// parameter-set seed for effdim/spectrum.
    pub seed: u64,
    pub out: PathBuf,
    /// Defaults per command: train all four; effdim/spectrum the three
    /// two-QPU schemes; dist-demo cc.
    pub schemes: Option<Vec<SchemeKind>>,
    /// Defaults per command: train 9; effdim 1-10; spectrum 4; dist-demo 2.
    pub sublayers: Option<Vec<usize>>,
    pub qubits_per_qpu: usize,
    pub pooling: PoolingKind,
    pub dataset: DatasetSection,
    pub train: TrainConfig,
    pub capacity: CapacitySection,
    pub dist: DistSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            schemes: None,
            sublayers: None,
            qubits_per_qpu: 4,
            pooling: PoolingKind::Standard,
            dataset: DatasetSection::default(),
            train: TrainConfig::default(),
            capacity: CapacitySection::default(),
            dist: DistSection::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Existing dataset CSV (with sidecar); generated from `seed` when absent.
    pub path: Option<PathBuf>,
    pub config: DatasetConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacitySection {
    pub n_theta: usize,
    pub n_samples: usize,
    pub data_seed: u64,
    /// Use one sampled outcome per input instead of the expectation.
    pub sampled: bool,
    pub tol_rel: f64,
}

impl Default for CapacitySection {
    fn default() -> Self {
        Self { n_theta: 20, n_samples: 500, data_seed: 1, sampled: false, tol_rel: RANK_TOL_REL }
    }
}

impl CapacitySection {
    pub fn mode(&self, seed: u64) -> FisherMode {
        if self.sampled {
            FisherMode::Sampled { seed }
        } else {
            FisherMode::Expected
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistSection {
    pub port: u16,
    pub mode: ExecMode,
    /// Validation instances pushed through both executors.
    pub instances: usize,
    pub tolerance: f64,
}

impl Default for DistSection {
    fn default() -> Self {
        Self { port: 0, mode: ExecMode::Threaded, instances: 4, tolerance: 1e-10 }
    }
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn schemes_for(&self, command: CommandKind) -> Vec<SchemeKind> {
        if let Some(s) = &self.schemes {
            return s.clone();
        }
        match command {
            CommandKind::Train => SchemeKind::ALL.to_vec(),
            CommandKind::Effdim | CommandKind::Spectrum if self.pooling == PoolingKind::Dumb => {
                vec![SchemeKind::NoComm, SchemeKind::QuantumComm]
            }
            CommandKind::Effdim | CommandKind::Spectrum => SchemeKind::DISTRIBUTED.to_vec(),
            CommandKind::DistDemo => vec![SchemeKind::ClassicalComm],
            CommandKind::GenData => Vec::new(),
        }
    }

    pub fn sublayers_for(&self, command: CommandKind) -> Vec<usize> {
        if let Some(l) = &self.sublayers {
            return l.clone();
        }
        match command {
            CommandKind::Train => vec![9],
            CommandKind::Effdim => (1..=10).collect(),
            CommandKind::Spectrum => vec![4],
            CommandKind::DistDemo => vec![2],
            CommandKind::GenData => Vec::new(),
        }
    }

    /// Cross-field checks that do not need a model build.
    pub fn check(&self, command: CommandKind) -> CliResult<()> {
        let schemes = self.schemes_for(command);
        let layers = self.sublayers_for(command);
        if command != CommandKind::GenData {
            if schemes.is_empty() || layers.is_empty() {
                return Err(CliError::Config("scheme and L lists must be non-empty".into()));
            }
            if layers.contains(&0) {
                return Err(CliError::Config("L must be at least 1".into()));
            }
        }
        if self.pooling == PoolingKind::Dumb && schemes.contains(&SchemeKind::ClassicalComm) {
            return Err(CliError::Config("dumb pooling is not defined for the classical-communication scheme".into()));
        }
        if command == CommandKind::Train && self.train.trials == 0 {
            return Err(CliError::Config("trials must be at least 1".into()));
        }
        if matches!(command, CommandKind::Effdim | CommandKind::Spectrum)
            && (self.capacity.n_theta == 0 || self.capacity.n_samples == 0)
        {
            return Err(CliError::Config("n_theta and n_samples must be at least 1".into()));
        }
        if command == CommandKind::DistDemo && self.dist.instances == 0 {
            return Err(CliError::Config("dist.instances must be at least 1".into()));
        }
        Ok(())
    }
}

/// Config file (if any) with command-line overrides applied.
pub fn resolve(command: CommandKind, cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(s) = &cli.scheme {
        cfg.schemes = Some(parse_scheme_list(s).map_err(|e| CliError::Config(format!("--scheme: {e}")))?);
    }
    if let Some(l) = &cli.sublayers {
        cfg.sublayers = Some(parse_usize_list(l).map_err(|e| CliError::Config(format!("--L: {e}")))?);
    }
    if let Some(t) = cli.trials {
        cfg.train.trials = t;
    }
    if let Some(i) = cli.iterations {
        cfg.train.iterations = i;
    }
    if cli.parity_fixed {
        cfg.train.interpret_mode = InterpretMode::ParityFixed;
    }
    if cli.dumb_pooling {
        cfg.pooling = PoolingKind::Dumb;
    }
    if let Some(p) = cli.port {
        cfg.dist.port = p;
    }
    cfg.train.seed = cfg.seed;
    cfg.check(command)?;
    Ok(cfg)
}
