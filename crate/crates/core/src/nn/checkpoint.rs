//! Checkpoint files.
//!
//! Layout: the 8-byte magic `SJCKPT\0\x01`, a little-endian `u32` header
//! length, a JSON header, then each tensor of the header's `tensors` list as
//! little-endian `f32` values in order.

use serde::{Deserialize, Serialize};

use super::params::{ParamGroup, Params, TransformerConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SJCKPT\0\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: TransformerConfig,
    pub step: u64,
    /// Hash of the tokenizer the model was trained with.
    pub vocab_hash: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Params<f32>,
}

impl Checkpoint {
    pub fn new(params: Params<f32>, step: u64, vocab_hash: impl Into<String>) -> Self {
        let tensors =
            params.layout.groups.iter().map(|g| TensorEntry { name: g.name.clone(), shape: g.shape.clone() }).collect();
        let header = CheckpointHeader {
            version: FORMAT_VERSION,
            config: params.config.clone(),
            step,
            vocab_hash: vocab_hash.into(),
            tensors,
        };
        Self { header, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + 4 * self.params.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for g in &self.params.layout.groups {
            for v in &self.params.data[g.offset..g.offset + g.len()] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::IncompatibleCheckpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| Error::IncompatibleCheckpoint(format!("header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::IncompatibleCheckpoint(format!("unsupported version {}", header.version)));
        }
        let mut params = Params::<f32>::init(&TransformerConfig { ..header.config.clone() })
            .map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
        let expected: Vec<(&str, &[usize])> =
            params.layout.groups.iter().map(|g: &ParamGroup| (g.name.as_str(), g.shape.as_slice())).collect();
        let found: Vec<(&str, &[usize])> =
            header.tensors.iter().map(|t| (t.name.as_str(), t.shape.as_slice())).collect();
        if expected != found {
            return Err(bad("tensor names or shapes do not match the config"));
        }
        let blob = &bytes[12 + hlen..];
        if blob.len() != 4 * params.data.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "expected {} parameter bytes, found {}",
                4 * params.data.len(),
                blob.len()
            )));
        }
        let groups = params.layout.groups.clone();
        let mut values = blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        for g in &groups {
            for slot in &mut params.data[g.offset..g.offset + g.len()] {
                *slot = values.next().expect("length checked");
            }
        }
        Ok(Self { header, params })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TransformerConfig {
        TransformerConfig {
            n_layer: 1,
            n_head: 2,
            d_model: 8,
            d_ff: 16,
            ctx_len: 8,
            vocab_size: 20,
            seed: 1,
            dropout: 0.0,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let params = Params::<f32>::init(&cfg()).unwrap();
        let ck = Checkpoint::new(params, 42, "abc");
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_corruption() {
        let ck = Checkpoint::new(Params::<f32>::init(&cfg()).unwrap(), 0, "abc");
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        assert!(Checkpoint::from_bytes(b"notackpt0000").is_err());
        let mut other = ck.clone();
        other.header.tensors[0].shape = vec![21, 8];
        assert!(matches!(Checkpoint::from_bytes(&other.to_bytes()), Err(Error::IncompatibleCheckpoint(_))));
    }
}
