//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SVE1" | u32 version | u64 total file length
//! u32 header length | header JSON
//! u32 array count | per array: u16 name length, name, u8 rank, u64 dims…, f64 data…
//! SHA-256 of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{EnsembleModel, ModelLayout};
use crate::rng::ALGORITHM_ID;
use crate::tensor::Tensor;
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 4] = b"SVE1";
pub const VERSION: u32 = 1;
const PREFIX: usize = 4 + 4 + 8;
const DIGEST: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub algorithm_id: String,
    /// SHA-256 of the layout JSON.
    pub spec_hash: String,
    pub layout: ModelLayout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn layout_hash(layout: &ModelLayout) -> String {
    hex(&Sha256::digest(serde_json::to_vec(layout).expect("layout serializes")))
}

/// Serializes `model` (and optionally the config that trained it).
pub fn encode(model: &EnsembleModel, train_config: Option<&TrainConfig>) -> Result<Vec<u8>> {
    let layout = model.layout();
    let header = CheckpointHeader {
        algorithm_id: ALGORITHM_ID.to_string(),
        spec_hash: layout_hash(&layout),
        layout,
        train_config: train_config.cloned(),
    };
    let header = serde_json::to_vec(&header)?;
    let arrays = model.named_arrays();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u64.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, t) in &arrays {
        let nb = name.as_bytes();
        let name_len = u16::try_from(nb.len()).map_err(|_| Error::Format(format!("array name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(nb);
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let total = (out.len() + DIGEST) as u64;
    out[8..16].copy_from_slice(&total.to_le_bytes());
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .buf
            .get(self.at..self.at + n)
            .ok_or_else(|| Error::Format(format!("payload ends inside a field at byte {}", self.at)))?;
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parses checkpoint bytes into the header and named arrays.
pub fn decode_raw(bytes: &[u8]) -> Result<(CheckpointHeader, BTreeMap<String, Tensor>)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, not an SVE1 checkpoint".into()));
    }
    if bytes.len() < PREFIX + DIGEST {
        return Err(Error::Length {
            expected: (PREFIX + DIGEST) as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}, expected {VERSION}")));
    }
    let total = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    if total != bytes.len() as u64 {
        return Err(Error::Length {
            expected: total,
            found: bytes.len() as u64,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }
    let mut c = Cursor { buf: body, at: PREFIX };
    let hlen = c.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(c.take(hlen)?)?;
    if header.algorithm_id != ALGORITHM_ID {
        return Err(Error::Format(format!("checkpoint rng {} differs from {ALGORITHM_ID}", header.algorithm_id)));
    }
    if header.spec_hash != layout_hash(&header.layout) {
        return Err(Error::Format("spec hash does not match the stored layout".into()));
    }
    let n = c.u32()?;
    let mut arrays = BTreeMap::new();
    for _ in 0..n {
        let nl = c.u16()? as usize;
        let name = String::from_utf8(c.take(nl)?.to_vec()).map_err(|_| Error::Format("array name is not UTF-8".into()))?;
        let rank = c.u8()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = c.take(len.checked_mul(8).ok_or_else(|| Error::Format("array too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        arrays.insert(name, Tensor::new(shape, data)?);
    }
    if c.at != body.len() {
        return Err(Error::Format(format!("{} trailing bytes after the last array", body.len() - c.at)));
    }
    Ok((header, arrays))
}

pub fn decode(bytes: &[u8]) -> Result<(EnsembleModel, CheckpointHeader)> {
    let (header, arrays) = decode_raw(bytes)?;
    let model = EnsembleModel::from_named_arrays(&header.layout, &arrays)?;
    Ok((model, header))
}

pub fn save_checkpoint(model: &EnsembleModel, train_config: Option<&TrainConfig>, path: &Path) -> Result<()> {
    let bytes = encode(model, train_config)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(EnsembleModel, CheckpointHeader)> {
    if !path.exists() {
        return Err(Error::Dependency(format!("checkpoint {} does not exist", path.display())));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
