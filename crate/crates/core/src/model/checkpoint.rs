//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"TRDCKPT\0"  u32 version  u32 hash_len  hash (utf-8)  u32 entry_count
//! per entry: u32 name_len  name  u32 ndim  u32 dims[ndim]  f32 data[prod(dims)]
//! ```
//!
//! The hash identifies the model configuration; loading into a different
//! configuration is refused unless forced.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::network::Model;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

const MAGIC: &[u8; 8] = b"TRDCKPT\0";
pub const VERSION: u32 = 1;

/// SHA-256 of the compact JSON form, hex encoded.
pub fn json_digest(value: &impl Serialize) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

pub fn config_hash(config: &ModelConfig) -> Result<String> {
    json_digest(config)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub entries: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &Model<T>) -> Result<Self> {
        Ok(Checkpoint {
            config_hash: config_hash(model.config())?,
            entries: model
                .state_entries()
                .into_iter()
                .map(|(n, s, d)| (n, s, d.iter().map(|v| v.as_f64() as f32).collect()))
                .collect(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        u32le(&mut out, VERSION as usize);
        u32le(&mut out, self.config_hash.len());
        out.extend_from_slice(self.config_hash.as_bytes());
        u32le(&mut out, self.entries.len());
        for (name, shape, data) in &self.entries {
            u32le(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            u32le(&mut out, shape.len());
            for &d in shape {
                u32le(&mut out, d);
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hash_len = r.u32()?;
        let config_hash = r.string(hash_len)?;
        let count = r.u32()?;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()?;
            let name = r.string(len)?;
            let ndim = r.u32()?;
            let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            entries.push((name, shape, data));
        }
        Ok(Checkpoint { config_hash, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }

    /// Copy weights into `model`, refusing a configuration mismatch unless `force`.
    pub fn restore<T: Scalar>(&self, model: &mut Model<T>, force: bool) -> Result<()> {
        let expected = config_hash(model.config())?;
        if self.config_hash != expected && !force {
            return Err(Error::Checkpoint(format!(
                "config hash mismatch: checkpoint {}, model {}",
                self.config_hash, expected
            )));
        }
        let entries: Vec<_> = self
            .entries
            .iter()
            .map(|(n, s, d)| (n.clone(), s.clone(), d.iter().map(|&v| T::of(v as f64)).collect()))
            .collect();
        model.load_entries(&entries)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (need {n}, have {})", self.pos, self.bytes.len() - self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("string is not utf-8".into()))
    }
}
