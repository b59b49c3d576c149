//! Flat binary parameter file: `DVERG1` magic, then per parameter the name
//! length (u32 LE), UTF-8 name, rank (u32 LE), dims (u32 LE each) and the
//! little-endian f32 payload. Parameters follow store order until EOF.

use std::io::{Read, Write};

use super::tensor::{ParameterStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"DVERG1";

/// Names of parameters that are stored but never trained.
pub const FROZEN_SUFFIX: &str = ".frozen";

pub fn write_params(w: &mut impl Write, params: &ParameterStore<f32>) -> Result<()> {
    w.write_all(MAGIC)?;
    for (name, t) in params.iter() {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn params_to_bytes(params: &ParameterStore<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    write_params(&mut out, params).expect("writing to a Vec cannot fail");
    out
}

pub fn read_params(r: &mut impl Read) -> Result<ParameterStore<f32>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    params_from_bytes(&bytes)
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<ParameterStore<f32>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("missing DVERG1 magic".into()));
    }
    let mut store = ParameterStore::new();
    while cur.pos < bytes.len() {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|e| Error::Checkpoint(format!("parameter name: {e}")))?
            .to_string();
        let rank = cur.u32()? as usize;
        let shape = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = cur
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut t = Tensor::from_vec(shape, data)?;
        if name.ends_with(FROZEN_SUFFIX) {
            t = t.frozen();
        }
        store.insert(name, t)?;
    }
    Ok(store)
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
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
