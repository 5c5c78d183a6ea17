//! Versioned checkpoint files.
//!
//! JSON with shortest-round-trip float formatting, so every finite f64
//! reloads bit-exactly. The payload is whatever the trainer serializes:
//! parameter tensors, optimizer state, RNG state and bookkeeping.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "satmec-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    payload: T,
}

pub fn save_checkpoint<T: Serialize>(path: &Path, payload: &T) -> Result<()> {
    let env = Envelope {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        payload,
    };
    let bytes = serde_json::to_vec(&env)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path)?;
    let env: Envelope<T> = serde_json::from_slice(&bytes)?;
    if env.format != CHECKPOINT_FORMAT {
        return Err(Error::Config(format!("not a checkpoint file: format {:?}", env.format)));
    }
    if env.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
            env.version
        )));
    }
    Ok(env.payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::tape::{ParamStore, Tensor};

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        store.add(Tensor::vector(vec![
            0.1 + 0.2,
            std::f64::consts::PI,
            f64::MIN_POSITIVE,
            -1.0 / 3.0,
            1e308,
        ]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&path, &store).unwrap();
        let loaded: ParamStore = load_checkpoint(&path).unwrap();
        for (a, b) in store.ids().zip(loaded.ids()) {
            for (x, y) in store.get(a).data.iter().zip(&loaded.get(b).data) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, br#"{"format":"other","version":1,"payload":null}"#).unwrap();
        assert!(load_checkpoint::<Option<u32>>(&path).is_err());
    }
}
