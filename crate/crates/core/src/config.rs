//! Run configuration and stage hashes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coordinator::CoordinatorMode;
use crate::dataset::{InputFormat, SplitRatios};
use crate::error::{Error, Result};
use crate::pretrain::PretrainConfig;
use crate::propagation::ModelConfig;
use crate::transfer::TransferConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainInput {
    pub name: String,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<InputFormat>,
}

impl DomainInput {
    pub fn input_format(&self) -> InputFormat {
        self.format.unwrap_or_else(|| InputFormat::from_path(&self.path))
    }
}

/// Everything one pipeline run needs. The root `seed` and `mode` override
/// the copies inside the stage configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub domains: Vec<DomainInput>,
    pub target: Option<String>,
    pub mode: CoordinatorMode,
    /// Coordinators per type per domain.
    pub coordinators: usize,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub transfer: TransferConfig,
    pub split: SplitRatios,
    pub seed: u64,
    pub k: usize,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            domains: Vec::new(),
            target: None,
            mode: CoordinatorMode::Hago,
            coordinators: 5,
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            transfer: TransferConfig::default(),
            split: SplitRatios::default(),
            seed: 2024,
            k: 10,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.pretrain_config().validate()?;
        self.transfer.validate()?;
        if self.mode != CoordinatorMode::None && self.coordinators == 0 {
            return Err(Error::Config(
                "coordinator modes need at least one coordinator per type".into(),
            ));
        }
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        Ok(())
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            mode: self.mode,
            seed: self.seed,
            ..self.pretrain.clone()
        }
    }

    pub fn transfer_config(&self) -> TransferConfig {
        TransferConfig {
            seed: self.seed,
            ..self.transfer.clone()
        }
    }

    /// Hash of everything that determines the pre-trained tables. The split
    /// is included because pre-training only sees the target's train edges.
    pub fn pretrain_hash(&self, dataset_hash: &str) -> Result<String> {
        stable_hash(&serde_json::json!({
            "dataset": dataset_hash,
            "coordinators": if self.mode == CoordinatorMode::None { 0 } else { self.coordinators },
            "model": self.model,
            "pretrain": self.pretrain_config(),
            "split": self.split,
        }))
    }

    /// Hash of everything that determines the transferred model.
    pub fn transfer_hash(&self, pretrain_hash: &str) -> Result<String> {
        stable_hash(&serde_json::json!({
            "pretrain": pretrain_hash,
            "transfer": self.transfer_config(),
        }))
    }
}

/// SHA-256 of the canonical JSON form.
pub fn stable_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
