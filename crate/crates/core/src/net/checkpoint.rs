//! Versioned JSON checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NetConfig, NetError, Network};
use crate::games::Variant;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Hash of the run configuration that produced this checkpoint.
    pub config_hash: String,
    /// Hash of the game and network topology only.
    pub model_hash: String,
    pub method: String,
    pub iteration: u32,
    pub net: NetConfig,
    pub variant: Variant,
    pub params: Vec<f32>,
    pub velocity: Vec<f32>,
}

pub fn model_hash(net: &NetConfig, variant: Variant) -> String {
    let text = serde_json::to_string(&(variant, net)).expect("model description serializes");
    hex_digest(text.as_bytes())
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn new(net: &Network<f32>, velocity: &[f32], config_hash: &str, method: &str, iteration: u32) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            model_hash: model_hash(net.config(), net.variant()),
            method: method.to_string(),
            iteration,
            net: *net.config(),
            variant: net.variant(),
            params: net.params().to_vec(),
            velocity: velocity.to_vec(),
        }
    }

    pub fn network(&self) -> Result<Network<f32>, NetError> {
        Network::from_params(self.net, self.variant, self.params.clone())
    }

    /// Writes via a temporary file so readers never observe a partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(self).map_err(|e| NetError::Checkpoint(e.to_string()))?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let bytes = fs::read(path)?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.display())))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(NetError::Checkpoint(format!(
                "{}: version {} (expected {CHECKPOINT_VERSION})",
                path.display(),
                ckpt.version
            )));
        }
        if ckpt.model_hash != model_hash(&ckpt.net, ckpt.variant) {
            return Err(NetError::Checkpoint(format!("{}: model hash does not match its contents", path.display())));
        }
        let expected = Network::<f32>::zeros(ckpt.net, ckpt.variant).param_count();
        if ckpt.params.len() != expected || ckpt.velocity.len() != expected {
            return Err(NetError::Checkpoint(format!(
                "{}: {} parameters, expected {expected}",
                path.display(),
                ckpt.params.len()
            )));
        }
        Ok(ckpt)
    }

    /// Loads and refuses a checkpoint written under a different configuration.
    pub fn load_matching(path: &Path, config_hash: &str) -> Result<Self, NetError> {
        let ckpt = Self::load(path)?;
        if ckpt.config_hash != config_hash {
            return Err(NetError::Checkpoint(format!(
                "{}: config hash {} does not match {config_hash}",
                path.display(),
                ckpt.config_hash
            )));
        }
        Ok(ckpt)
    }
}
