//! Checkpoint layout: 8-byte magic, u64 little-endian header length, JSON
//! header, then the parameters as little-endian f64.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Head, Mlp};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SMILCKP1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub layer_sizes: Vec<usize>,
    pub head: Head,
    pub seed: u64,
    pub step: u64,
    pub num_params: usize,
}

pub fn save_checkpoint(path: &Path, model: &Mlp, step: u64) -> Result<()> {
    let header = CheckpointHeader {
        layer_sizes: model.layer_sizes().to_vec(),
        head: model.head(),
        seed: model.seed(),
        step,
        num_params: model.num_params(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(16 + json.len() + 8 * model.num_params());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for p in model.params() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Mlp, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::parse(path, 0, msg.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body_start = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[16..body_start]).map_err(|e| bad(&format!("header: {e}")))?;
    let body = &bytes[body_start..];
    if body.len() != 8 * header.num_params {
        return Err(bad(&format!(
            "expected {} parameter bytes, found {}",
            8 * header.num_params,
            body.len()
        )));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let model = Mlp::from_params(&header.layer_sizes, header.head, header.seed, params)?;
    Ok((model, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = Mlp::new(&[4, 6, 3], Head::Softmax, 17).unwrap();
        save_checkpoint(&path, &m, 42).unwrap();
        let (back, header) = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.step, 42);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &Mlp::new(&[2, 1], Head::Linear, 0).unwrap(), 0).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Parse { .. })));
    }
}
