//! Run manifests: the resolved config, tool versions and artifact hashes.
//! The manifest is written before any result and completed afterwards.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::{self, Output};
use crate::{CliError, CliResult, CommandKind, ExperimentConfig, RunOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: CommandKind,
    pub config: ExperimentConfig,
    pub versions: BTreeMap<String, String>,
    pub started_unix: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    fn write(&self, path: &Path) -> CliResult<()> {
        write_file(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

pub fn manifest_path(out: &Path, command: CommandKind) -> PathBuf {
    out.join(format!("{}.manifest.json", command.name()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|source| CliError::Io { path: path.into(), source })
}

fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("dqml-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("dqml-core".to_string(), dqml_core::VERSION.to_string()),
    ])
}

/// Runs `command`, writing the manifest first and the artifacts after. With
/// `expected`, every artifact must match the recorded hash.
pub fn execute(command: CommandKind, cfg: ExperimentConfig, expected: Option<&[Artifact]>) -> CliResult<RunOutcome> {
    fs::create_dir_all(&cfg.out).map_err(|source| CliError::Io { path: cfg.out.clone(), source })?;
    let path = manifest_path(&cfg.out, command);
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut manifest = Manifest {
        command,
        config: cfg.clone(),
        versions: versions(),
        started_unix,
        status: RunStatus::Running,
        failure: None,
        artifacts: Vec::new(),
    };
    manifest.write(&path)?;

    let Output { files, summary, failure } = match commands::run(command, &cfg) {
        Ok(o) => o,
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.failure = Some(e.to_string());
            manifest.write(&path)?;
            return Err(e);
        }
    };
    for (name, bytes) in &files {
        write_file(&cfg.out.join(name), bytes)?;
        manifest.artifacts.push(Artifact { path: name.clone(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
    }
    let mut failure = failure;
    if let Some(exp) = expected {
        if exp != manifest.artifacts.as_slice() {
            let changed: Vec<&str> = manifest
                .artifacts
                .iter()
                .filter(|a| !exp.contains(a))
                .map(|a| a.path.as_str())
                .collect();
            failure.get_or_insert_with(|| format!("resumed run did not reproduce the recorded artifacts: {changed:?}"));
        }
    }
    manifest.status = if failure.is_some() { RunStatus::Failed } else { RunStatus::Complete };
    manifest.failure = failure.clone();
    manifest.write(&path)?;
    if let Some(f) = failure {
        return Err(CliError::Numerical(f));
    }
    Ok(RunOutcome { manifest_path: path, manifest, summary })
}

/// Re-runs a recorded command into the manifest's directory. A completed
/// manifest's artifacts must be reproduced exactly.
pub fn resume(path: &Path) -> CliResult<RunOutcome> {
    let old = Manifest::load(path)?;
    let mut cfg = old.config.clone();
    cfg.out = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.check(old.command)?;
    let expected = (old.status == RunStatus::Complete).then_some(old.artifacts.as_slice());
    execute(old.command, cfg, expected)
}
