//! Reproducibility manifest written beside every output artifact.
//!
//! Contains no wall-clock data, so re-running the same command with the
//! same config and seeds reproduces it byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
}

/// SHA-256 over the canonical TOML serialization of the config.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let canonical = cfg.to_toml()?;
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    Ok(hex_string(&hasher.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, outputs: &[String]) -> Result<Self> {
        Ok(Manifest {
            tool: "satmec".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256: config_hash(cfg)?,
            seeds: cfg.seeds.clone(),
            outputs: outputs.to_vec(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_config_sensitive() {
        let cfg = ExperimentConfig::default();
        assert_eq!(config_hash(&cfg).unwrap(), config_hash(&cfg).unwrap());
        let mut other = cfg.clone();
        other.alpha1 = 0.3;
        other.alpha2 = 0.7;
        assert_ne!(config_hash(&cfg).unwrap(), config_hash(&other).unwrap());
    }

    #[test]
    fn manifest_bytes_are_reproducible() {
        let cfg = ExperimentConfig::default();
        let m1 = Manifest::new("sweep", &cfg, &["out.csv".into()]).unwrap();
        let m2 = Manifest::new("sweep", &cfg, &["out.csv".into()]).unwrap();
        assert_eq!(
            serde_json::to_vec(&m1).unwrap(),
            serde_json::to_vec(&m2).unwrap()
        );
    }
}
