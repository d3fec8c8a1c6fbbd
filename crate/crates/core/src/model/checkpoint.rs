//! Binary checkpoint: `BEVCKPT\0`, u32 version, u64 header length, a JSON
//! header, u64 parameter count, then the parameters as little-endian f64.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, TrainingConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BEVCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub feature_dim: usize,
    pub hidden: usize,
    pub k: usize,
    pub horizon: usize,
    pub pool: usize,
    pub training: TrainingConfig,
    /// Iteration at which these parameters were captured.
    pub iteration: usize,
    pub best_val_loss: Option<f64>,
    #[serde(default)]
    pub extra: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(28 + header.len() + 8 * self.params.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.data.len() as u64).to_le_bytes());
        for p in &self.params.data {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Corruption(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Format("checkpoint: bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("checkpoint: unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < hlen + 8 {
            return Err(corrupt("truncated header"));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&body[..hlen]).map_err(|e| corrupt(&format!("header JSON: {e}")))?;
        let count = u64::from_le_bytes(body[hlen..hlen + 8].try_into().unwrap()) as usize;
        let payload = &body[hlen + 8..];
        let output = header.k * (2 * header.horizon + 1);
        let expected = ModelParams::param_count(header.feature_dim, header.hidden, output);
        if count != expected || payload.len() != 8 * count {
            return Err(corrupt(&format!(
                "expected {expected} parameters, found count {count} and {} bytes",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let params = ModelParams {
            feature_dim: header.feature_dim,
            hidden: header.hidden,
            k: header.k,
            horizon: header.horizon,
            pool: header.pool,
            data,
        };
        Ok(Checkpoint { header, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
