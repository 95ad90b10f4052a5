//! Run ledger: what a command read, what it wrote, and from which config.
//!
//! Reports stay byte-stable across identical runs; wall-clock timestamps are
//! recorded here only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stagewise::io_util::write_atomic;

use crate::error::{CliError, CliResult};

pub const LEDGER_FILE: &str = "ledger.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the ledger's directory.
    pub path: String,
    pub kind: String,
    pub sha256: String,
    /// Step that produced the artifact.
    pub step: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEntry {
    pub name: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Which videos trained which model, seeds, fold assignments.
    pub provenance: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub inputs: Vec<InputEntry>,
    pub artifacts: Vec<ArtifactEntry>,
    pub steps: Vec<StepEntry>,
}

pub fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::dependency(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

impl RunLedger {
    pub fn new(command: &str, config_hash: String) -> Self {
        RunLedger {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            steps: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(InputEntry {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    /// Records `path` (under `root`) once; a second record of the same path replaces the first.
    pub fn artifact(&mut self, root: &Path, path: &Path, kind: &str, step: &str) -> CliResult<()> {
        let rel = path.strip_prefix(root).unwrap_or(path).display().to_string();
        let entry = ArtifactEntry {
            path: rel,
            kind: kind.into(),
            sha256: sha256_file(path)?,
            step: step.into(),
        };
        match self.artifacts.iter_mut().find(|a| a.path == entry.path) {
            Some(a) => *a = entry,
            None => self.artifacts.push(entry),
        }
        Ok(())
    }

    /// Records every regular file below `dir`.
    pub fn artifact_tree(&mut self, root: &Path, dir: &Path, kind: &str, step: &str) -> CliResult<()> {
        for f in files_below(dir)? {
            self.artifact(root, &f, kind, step)?;
        }
        Ok(())
    }

    pub fn step(&mut self, name: &str, started_unix: f64, provenance: serde_json::Value) {
        self.steps.push(StepEntry {
            name: name.into(),
            started_unix,
            finished_unix: now_unix(),
            provenance,
        });
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(LEDGER_FILE);
        let bytes = serde_json::to_vec_pretty(self).expect("ledger serializes");
        write_atomic(&path, &bytes).map_err(CliError::from)?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> CliResult<Self> {
        let path = dir.join(LEDGER_FILE);
        let raw = std::fs::read(&path)
            .map_err(|e| CliError::dependency(format!("cannot read ledger {}: {e}", path.display())))?;
        serde_json::from_slice(&raw).map_err(|e| CliError::dependency(format!("bad ledger {}: {e}", path.display())))
    }

    /// Artifact counts per kind.
    pub fn summary(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for a in &self.artifacts {
            *m.entry(a.kind.clone()).or_insert(0) += 1;
        }
        m
    }
}

/// Regular files below `dir`, sorted, excluding the ledger itself.
pub fn files_below(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let rd =
            std::fs::read_dir(&d).map_err(|e| CliError::dependency(format!("cannot list {}: {e}", d.display())))?;
        for entry in rd {
            let p = entry.map_err(|e| CliError::dependency(e.to_string()))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != LEDGER_FILE) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}
