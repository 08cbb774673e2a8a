//! Policy checkpoints.
//!
//! Layout, little-endian:
//!
//! | field          | size      |
//! |----------------|-----------|
//! | magic          | 8 bytes `APEXCKPT` |
//! | metadata length `L` | u64 |
//! | metadata       | `L` bytes of JSON ([`CheckpointMeta`]) |
//! | parameter count `N` | u64 |
//! | parameters     | `N` f64 values |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::FeatureConfig;
use super::network::{NetLayout, PolicyParams};
use crate::error::{ApexError, Result};

pub const MAGIC: &[u8; 8] = b"APEXCKPT";

/// Everything needed to rebuild inputs and resume the random streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub layout: NetLayout,
    pub features: FeatureConfig,
    pub stage: String,
    pub iteration: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: PolicyParams,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("metadata is always serializable");
        let mut out = Vec::with_capacity(24 + meta.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for x in &self.params.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| ApexError::format(path, m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing APEXCKPT header"));
        }
        let u64_at = |o: usize| -> Result<u64> {
            bytes
                .get(o..o + 8)
                .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| bad("truncated checkpoint"))
        };
        let meta_len = u64_at(8)? as usize;
        let meta_bytes = bytes
            .get(16..16 + meta_len)
            .ok_or_else(|| bad("truncated metadata"))?;
        let meta: CheckpointMeta =
            serde_json::from_slice(meta_bytes).map_err(|e| bad(&e.to_string()))?;
        let n = u64_at(16 + meta_len)? as usize;
        let body = 24 + meta_len;
        if bytes.len() != body + 8 * n {
            return Err(bad("parameter block length does not match header"));
        }
        if n != meta.layout.param_count() {
            return Err(bad("parameter count does not match the layout"));
        }
        let data = (0..n)
            .map(|i| f64::from_le_bytes(bytes[body + 8 * i..body + 8 * i + 8].try_into().unwrap()))
            .collect();
        Ok(Checkpoint {
            params: PolicyParams {
                layout: meta.layout.clone(),
                data,
            },
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| ApexError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| ApexError::io(path, e))?;
        Checkpoint::decode(&bytes, path)
    }
}
