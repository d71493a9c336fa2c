//! Little-endian parameter checkpoint format:
//!
//! ```text
//! magic   "PNPW"
//! version u16  (1, or 2 with metadata)
//! v2 only: meta_len u32, meta bytes (UTF-8)
//! count   u32
//! count × { name_len u16, name bytes (UTF-8), rank u8, dims u32 × rank,
//!           payload f64 × product(dims) }
//! ```
//! Tensors are written in name order, so equal stores serialize identically.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NumError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PNPW";
pub const VERSION: u16 = 1;
pub const VERSION_META: u16 = 2;

pub fn to_bytes(store: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    write_tensors(store, &mut out)?;
    Ok(out)
}

/// Version-2 checkpoint carrying a free-form metadata string.
pub fn to_bytes_with_meta(store: &ParamStore, meta: &str) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION_META.to_le_bytes());
    let len = u32::try_from(meta.len()).map_err(|_| NumError::Checkpoint("metadata too long".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    write_tensors(store, &mut out)?;
    Ok(out)
}

fn write_tensors(store: &ParamStore, out: &mut Vec<u8>) -> Result<()> {
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        let nb = name.as_bytes();
        let nlen = u16::try_from(nb.len())
            .map_err(|_| NumError::Checkpoint(format!("name too long: {name}")))?;
        out.extend_from_slice(&nlen.to_le_bytes());
        out.extend_from_slice(nb);
        let rank = u8::try_from(t.rank())
            .map_err(|_| NumError::Checkpoint(format!("rank too large for {name}")))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| NumError::Checkpoint(format!("dim too large in {name}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| NumError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
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
}

pub fn from_bytes(buf: &[u8]) -> Result<ParamStore> {
    Ok(from_bytes_with_meta(buf)?.0)
}

/// Reads either version; version 1 yields empty metadata.
pub fn from_bytes_with_meta(buf: &[u8]) -> Result<(ParamStore, String)> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(NumError::Checkpoint("bad magic".into()));
    }
    let version = c.u16()?;
    let meta = match version {
        VERSION => String::new(),
        VERSION_META => {
            let n = c.u32()? as usize;
            std::str::from_utf8(c.take(n)?)
                .map_err(|_| NumError::Checkpoint("metadata is not UTF-8".into()))?
                .to_string()
        }
        v => return Err(NumError::Checkpoint(format!("unsupported version {v}"))),
    };
    let count = c.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let nlen = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(nlen)?)
            .map_err(|_| NumError::Checkpoint("name is not UTF-8".into()))?
            .to_string();
        let rank = c.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u32()? as usize);
        }
        let n: usize = dims.iter().product();
        let raw = c.take(n.checked_mul(8).ok_or_else(|| NumError::Checkpoint("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        store.insert(name, Tensor::new(dims, data)?);
    }
    if c.pos != buf.len() {
        return Err(NumError::Checkpoint(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Ok((store, meta))
}

pub fn save(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let bytes = to_bytes(store)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore> {
    Ok(load_with_meta(path)?.0)
}

pub fn save_with_meta(store: &ParamStore, meta: &str, path: impl AsRef<Path>) -> Result<()> {
    let bytes = to_bytes_with_meta(store, meta)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn load_with_meta(path: impl AsRef<Path>) -> Result<(ParamStore, String)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    from_bytes_with_meta(&buf)
}
