//! Single-file model checkpoints.
//!
//! Layout (little-endian): magic `SKAGMDL1`, u32 version, u32 metadata length
//! and a JSON metadata blob, u32 tensor count, then per tensor: u32 name
//! length, UTF-8 name, u8 trainable flag, u64 rows, u64 cols and rows×cols f64
//! values.

use std::fs;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SKAGMDL1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ParamStore, metadata: &serde_json::Value) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let meta = metadata.to_string();
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for t in params.tensors() {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(u8::from(t.trainable));
        out.extend_from_slice(&(t.rows as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols as u64).to_le_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Data("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParamStore, serde_json::Value)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Data("not a model checkpoint (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = c.u32()? as usize;
    let metadata: serde_json::Value =
        serde_json::from_slice(c.take(meta_len)?).map_err(|e| Error::Data(format!("bad checkpoint metadata: {e}")))?;
    let count = c.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::Data("tensor name is not UTF-8".into()))?
            .to_string();
        let trainable = c.take(1)?[0] != 0;
        let rows = c.u64()? as usize;
        let cols = c.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Data("tensor shape overflow".into()))?;
        let raw = c.take(n.checked_mul(8).ok_or_else(|| Error::Data("tensor shape overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let mut t = Tensor::from_data(name, rows, cols, data)?;
        t.trainable = trainable;
        if params.index_of(&t.name).is_some() {
            return Err(Error::Data(format!("duplicate tensor {:?} in checkpoint", t.name)));
        }
        params.push(t);
    }
    if c.pos != bytes.len() {
        return Err(Error::Data("trailing bytes after checkpoint".into()));
    }
    Ok((params, metadata))
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ParamStore, metadata: &serde_json::Value) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params, metadata)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ParamStore, serde_json::Value)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
