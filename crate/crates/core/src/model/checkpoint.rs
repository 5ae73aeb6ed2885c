//! Single-file checkpoint container.
//!
//! Layout: `VHCK` magic, little-endian `u32` header length, JSON header,
//! `param_count` little-endian `f64` values, then a 32-byte SHA-256 over
//! everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backward::TaskSpec;
use super::{ModelConfig, ModelError, ModelParams, ParamLayout};
use crate::corpus::LabelRegistry;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"VHCK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub task: TaskSpec,
    pub config: ModelConfig,
    pub registry: LabelRegistry,
    /// SHA-256 of the tokenizer JSON the model was trained with.
    pub vocab_hash: String,
    /// Unix seconds; taken from `SOURCE_DATE_EPOCH` when set, else 0, so
    /// identical training runs produce identical files.
    pub created_at: u64,
    pub param_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(task: TaskSpec, params: ModelParams, registry: LabelRegistry, vocab_hash: String) -> Self {
        let created_at = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        Self {
            header: CheckpointHeader {
                format_version: CHECKPOINT_VERSION,
                task,
                config: params.config.clone(),
                registry,
                vocab_hash,
                created_at,
                param_count: params.data.len(),
            },
            params,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + header.len() + self.params.data.len() * 8 + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.params.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::Checkpoint(m.to_string());
        if bytes.len() < 8 + 32 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(bad("checksum mismatch; file is corrupt"));
        }
        let hlen = u32::from_le_bytes(body[4..8].try_into().unwrap()) as usize;
        let header_bytes = body.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(header_bytes).map_err(|e| bad(&format!("bad header: {e}")))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "format version {} unsupported (expected {CHECKPOINT_VERSION})",
                header.format_version
            )));
        }
        header.config.validate()?;
        let layout = ParamLayout::new(&header.config);
        let payload = &body[8 + hlen..];
        if header.param_count != layout.total() || payload.len() != layout.total() * 8 {
            return Err(bad("parameter count does not match config"));
        }
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let params = ModelParams {
            config: header.config.clone(),
            layout,
            data,
        };
        if !params.is_finite() {
            return Err(bad("non-finite parameter"));
        }
        Ok(Self { header, params })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), ModelError> {
    fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};
    use std::collections::BTreeMap;

    fn sample() -> Checkpoint {
        let params = init_model(&ModelConfig::tiny(270, 2, 1)).unwrap();
        let mut map = BTreeMap::new();
        map.insert("CWE-119".to_string(), "Base".to_string());
        map.insert("CWE-20".to_string(), "Base".to_string());
        Checkpoint::new(
            TaskSpec::Multitask,
            params,
            LabelRegistry::from_map(map),
            "ab".repeat(32),
        )
    }

    #[test]
    fn round_trip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = sample();
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        assert!(back
            .params
            .data
            .iter()
            .zip(&ck.params.data)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.to_bytes(), ck.to_bytes());
    }

    #[test]
    fn tampering_detected() {
        let ck = sample();
        let mut bytes = ck.to_bytes();
        let n = bytes.len();
        bytes[n - 100] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(ModelError::Checkpoint(m)) if m.contains("checksum")));
        let mut bytes = ck.to_bytes();
        bytes[n - 1] ^= 0x80;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        assert!(Checkpoint::from_bytes(b"nope").is_err());
    }

    #[test]
    fn version_mismatch_refused() {
        let mut ck = sample();
        ck.header.format_version = 99;
        let bytes = ck.to_bytes();
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 99"));
    }
}
