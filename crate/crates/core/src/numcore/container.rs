//! Binary parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic           4 bytes  "AQPC"
//! format_version  u32      currently 1
//! entry_count     u64
//! entry_count × {
//!     name_len    u32
//!     name        name_len bytes, UTF-8
//!     dtype       u8       1 = f64
//!     ndim        u32
//!     dims        ndim × u64
//!     payload     product(dims) × f64, row-major
//! }
//! ```
//!
//! Entries are written in name order, so equal stores produce equal bytes.

use std::path::Path;

use super::store::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AQPC";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F64: u8 = 1;

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        out.extend_from_slice(&t.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated: need {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format_version {version}")));
    }
    let count = r.u64()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Format(format!("entry name is not UTF-8: {e}")))?
            .to_string();
        let dtype = r.u8()?;
        if dtype != DTYPE_F64 {
            return Err(Error::Format(format!("`{name}`: unsupported dtype {dtype}")));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let payload = r.take(numel * 8)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("`{name}`: {e}")))?;
        store
            .insert(name, t)
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, encode(store)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
