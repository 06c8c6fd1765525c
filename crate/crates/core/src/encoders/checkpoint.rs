//! Checkpoint file: `"VGS1"`, u32 tensor count, then per tensor a u16 name
//! length, the UTF-8 name, a u8 rank, rank u64 dims and the f32 values; then
//! a UTF-8 JSON metadata trailer followed by its u64 byte length. All
//! integers and floats are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"VGS1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub epoch: usize,
    pub scenario: String,
    pub seed: u64,
    /// Effective run configuration, so evaluation needs only the checkpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

pub fn save_checkpoint(path: &Path, params: &ParamSet<f32>, meta: &CheckpointMeta) -> Result<()> {
    let mut out = Vec::with_capacity(16 + params.scalar_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| Error::Malformed(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let json = serde_json::to_vec(meta).map_err(|e| Error::Serde(e.to_string()))?;
    out.extend_from_slice(&json);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::TruncatedCheckpoint)?;
        let s = self.buf.get(self.pos..end).ok_or(Error::TruncatedCheckpoint)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamSet<f32>, CheckpointMeta)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 4 {
        return Err(Error::TruncatedCheckpoint);
    }
    if &buf[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader { buf: &buf, pos: 4 };
    let count = r.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or(Error::TruncatedCheckpoint)?;
        let data = r
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name, Tensor { shape, data });
    }
    let rest = buf.len() - r.pos;
    if rest < 8 {
        return Err(Error::TruncatedCheckpoint);
    }
    let json_len = u64::from_le_bytes(buf[buf.len() - 8..].try_into().unwrap()) as usize;
    if json_len != rest - 8 {
        return Err(Error::TruncatedCheckpoint);
    }
    let meta = serde_json::from_slice(&buf[r.pos..buf.len() - 8]).map_err(|e| Error::Malformed(e.to_string()))?;
    Ok((params, meta))
}
