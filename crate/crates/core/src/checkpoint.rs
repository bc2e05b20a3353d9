//! Binary checkpoint container.
//!
//! Layout (little-endian): 8 magic bytes, `u32` format version, `u64`-length
//! prefixed metadata JSON, `u64`-length prefixed normalisation JSON, `u32`
//! array count, then per array a `u32`-length name, `u32` rank, `u64` dims and
//! the raw `f64` values.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{NormalizationStats, SplitFractions, DEFAULT_SPLIT};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 8] = b"CHLCAST\0";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild inputs for a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    /// Input columns in model order; the first is the target.
    pub features: Vec<String>,
    pub target: String,
    /// Fractions the training run split its windows with.
    #[serde(default = "default_split")]
    pub split: SplitFractions,
}

fn default_split() -> SplitFractions {
    DEFAULT_SPLIT
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub stats: NormalizationStats,
    pub params: ModelParams,
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for block in [serde_json::to_vec(&ckpt.meta)?, serde_json::to_vec(&ckpt.stats)?] {
        out.extend_from_slice(&(block.len() as u64).to_le_bytes());
        out.extend_from_slice(&block);
    }
    let named = ckpt.params.named();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| {
            Error::CorruptCheckpoint(format!(
                "needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, wide: bool) -> Result<usize> {
        let v = if wide { self.u64()? } else { u64::from(self.u32()?) };
        usize::try_from(v).map_err(|_| Error::CorruptCheckpoint(format!("length {v} out of range")))
    }
}

fn corrupt(e: impl std::fmt::Display) -> Error {
    Error::CorruptCheckpoint(e.to_string())
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::CorruptCheckpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let n = r.len(true)?;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(n)?).map_err(corrupt)?;
    let n = r.len(true)?;
    let stats: NormalizationStats = serde_json::from_slice(r.take(n)?).map_err(corrupt)?;

    let count = r.u32()?;
    let mut arrays = BTreeMap::new();
    for _ in 0..count {
        let n = r.len(false)?;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(corrupt)?;
        let rank = r.len(false)?;
        let shape = (0..rank).map(|_| r.len(true)).collect::<Result<Vec<_>>>()?;
        let size = shape.iter().try_fold(1usize, |a, d| a.checked_mul(*d)).ok_or_else(|| corrupt("array size overflows"))?;
        let raw = r.take(size.checked_mul(8).ok_or_else(|| corrupt("array size overflows"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        arrays.insert(name, Tensor::new(shape, data).map_err(corrupt)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let mut params = ModelParams::init(&meta.config, meta.features.len()).map_err(corrupt)?;
    let mut missing = None;
    params.for_each_mut(&mut |name, t| match arrays.remove(&name) {
        Some(a) if a.shape() == t.shape() => *t = a,
        _ => {
            missing.get_or_insert(name);
        }
    });
    if let Some(name) = missing {
        return Err(Error::CorruptCheckpoint(format!("array {name:?} missing or misshapen")));
    }
    if let Some(extra) = arrays.keys().next() {
        return Err(Error::CorruptCheckpoint(format!("unexpected array {extra:?}")));
    }
    Ok(Checkpoint { meta, stats, params })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode(&std::fs::read(path)?)
}
