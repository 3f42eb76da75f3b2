//! Run directory layout, stage metadata and config resolution.
//!
//! ```text
//! <out>/manifest.json  ids.json  edges/       dataset (ingest)
//! <out>/config.json                           last effective config
//! <out>/checkpoints/{pretrain,transfer}.{bin,json}
//! <out>/reports/  <out>/logs/
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hago::config::RunConfig;
use hago::dataset::{read_dataset_dir, Manifest, MultiDomainDataset};
use hago::store::{read_checkpoint, EmbeddingStore};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_ARTIFACT: u8 = 3;
pub const EXIT_QUERY: u8 = 4;
pub const EXIT_NUMERIC: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(EXIT_INPUT, message)
    }

    pub fn artifact(message: impl Into<String>) -> Self {
        Self::new(EXIT_ARTIFACT, message)
    }

    pub fn query(message: impl Into<String>) -> Self {
        Self::new(EXIT_QUERY, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn exit_code(e: &hago::Error) -> u8 {
    use hago::Error as E;
    match e {
        E::Parse { .. } | E::EmptyDomain(_) | E::Config(_) | E::Io { .. } | E::Json(_) => EXIT_INPUT,
        E::Artifact(_) | E::Shape(_) => EXIT_ARTIFACT,
        E::Numeric(_) | E::Invariant(_) | E::Sampling(_) | E::Report(_) | E::Projection(_) => EXIT_NUMERIC,
    }
}

impl From<hago::Error> for CliError {
    fn from(e: hago::Error) -> Self {
        CliError::new(exit_code(&e), e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Errors while reading something an earlier stage should have written.
pub fn as_artifact(e: hago::Error) -> CliError {
    match e {
        hago::Error::Io { .. } | hago::Error::Json(_) => CliError::artifact(e.to_string()),
        other => other.into(),
    }
}

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path) -> Self {
        RunDir {
            root: root.to_path_buf(),
        }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn checkpoint(&self, stage: &str) -> PathBuf {
        self.checkpoints().join(format!("{stage}.bin"))
    }

    pub fn meta(&self, stage: &str) -> PathBuf {
        self.checkpoints().join(format!("{stage}.json"))
    }

    pub fn ensure(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))
    }

    pub fn dataset(&self) -> CliResult<(MultiDomainDataset, Manifest)> {
        read_dataset_dir(&self.root).map_err(|e| match e {
            hago::Error::Artifact(m) => CliError::artifact(format!("{m} (run `hago ingest` first)")),
            other => as_artifact(other),
        })
    }

    pub fn read_meta(&self, stage: &str) -> CliResult<StageMeta> {
        let path = self.meta(stage);
        let text = std::fs::read_to_string(&path)
            .map_err(|_| CliError::artifact(format!("missing {} (run `hago {stage}` first)", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::artifact(format!("{}: {e}", path.display())))
    }

    pub fn read_checkpoint(&self, stage: &str) -> CliResult<EmbeddingStore<f32>> {
        read_checkpoint(&self.checkpoint(stage)).map_err(as_artifact)
    }
}

/// Sidecar of a checkpoint: the hash of the config that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMeta {
    pub stage: String,
    pub hash: String,
    /// Hash of the stage this one was built on (dataset or pre-training).
    pub parent: String,
    pub config: RunConfig,
}

/// Refuse to build on an artifact produced by a different config.
pub fn check_hash(stage: &str, meta: &StageMeta, expected: &str) -> CliResult<()> {
    if meta.hash != expected {
        return Err(CliError::artifact(format!(
            "stale {stage} checkpoint: it was built with config hash {}, the current config hashes to {}; rerun `hago {stage}` or pass the matching config",
            short(&meta.hash),
            short(expected)
        )));
    }
    Ok(())
}

pub fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::input(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}
