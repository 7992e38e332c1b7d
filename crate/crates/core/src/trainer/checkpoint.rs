//! Model checkpoint format.
//!
//! `b"TLCKPT01"`, a little-endian `u64` header length, the JSON header, then
//! every parameter as a little-endian `f64`.

use serde::{Deserialize, Serialize};

use super::{Mlp, TrainConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TLCKPT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub layer_sizes: Vec<usize>,
    pub num_params: usize,
    pub config_digest: String,
    pub config: TrainConfig,
}

pub fn encode(model: &Mlp, cfg: &TrainConfig) -> Vec<u8> {
    let header = CheckpointHeader {
        layer_sizes: model.sizes().to_vec(),
        num_params: model.num_params(),
        config_digest: cfg.digest(),
        config: cfg.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + 8 * model.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(Mlp, CheckpointHeader)> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16 + len)
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    if header.config.digest() != header.config_digest {
        return Err(bad("config digest mismatch"));
    }
    let blob = &bytes[16 + len..];
    if blob.len() != 8 * header.num_params {
        return Err(bad("parameter blob has the wrong size"));
    }
    let params = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let model = Mlp::from_params(header.layer_sizes.clone(), params)?;
    Ok((model, header))
}
