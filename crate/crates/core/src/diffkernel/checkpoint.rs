//! Binary checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic          8 bytes  "KGRECCKP"
//! version        u32      1
//! dim            u32
//! num_entities   u32
//! num_relations  u32
//! num_users      u32
//! tensor_count   u32
//! tensor_count x {
//!     name_len   u32
//!     name       name_len bytes, UTF-8
//!     rows       u32
//!     cols       u32
//!     len        u32      rows * cols
//!     values     len x f32
//! }
//! adam_step      u64
//! tensor_count x {        same order as above
//!     len        u32
//!     m          len x f32
//!     len        u32
//!     v          len x f32
//! }
//! ```
//!
//! Values are always stored as `f32`; a 64-bit store is narrowed on save.

use std::io::Write;
use std::path::Path;

use super::matrix::Matrix;
use super::params::ParamStore;
use crate::error::{KgError, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"KGRECCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub dim: u32,
    pub num_entities: u32,
    pub num_relations: u32,
    pub num_users: u32,
}

pub fn encode_checkpoint<T: Scalar>(header: &CheckpointHeader, store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + store.num_scalars() * 12);
    out.extend_from_slice(MAGIC);
    for x in [
        VERSION,
        header.dim,
        header.num_entities,
        header.num_relations,
        header.num_users,
        store.len() as u32,
    ] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let put_floats = |out: &mut Vec<u8>, m: &Matrix<T>| {
        out.extend_from_slice(&(m.len() as u32).to_le_bytes());
        for &x in m.as_slice() {
            out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    };
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let t = store.tensor(id);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        put_floats(&mut out, t);
    }
    out.extend_from_slice(&store.step().to_le_bytes());
    for id in store.ids() {
        let (m, v) = store.moments(id);
        put_floats(&mut out, m);
        put_floats(&mut out, v);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(KgError::Checkpoint(format!("truncated at byte {}", self.at)));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn floats<T: Scalar>(&mut self, expected: usize) -> Result<Vec<T>> {
        let len = self.u32()? as usize;
        if len != expected {
            return Err(KgError::Checkpoint(format!("array length {len}, expected {expected}")));
        }
        let bytes = self.take(len * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect())
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(CheckpointHeader, ParamStore<T>)> {
    let mut r = Reader { buf: bytes, at: 0 };
    if r.take(8)? != MAGIC {
        return Err(KgError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(KgError::Checkpoint(format!("unsupported version {version}")));
    }
    let header = CheckpointHeader {
        dim: r.u32()?,
        num_entities: r.u32()?,
        num_relations: r.u32()?,
        num_users: r.u32()?,
    };
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| KgError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let data = r.floats(rows * cols)?;
        store.insert(name, Matrix::from_vec(rows, cols, data));
    }
    store.set_step(r.u64()?);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (rows, cols) = store.tensor(id).shape();
        let m = Matrix::from_vec(rows, cols, r.floats(rows * cols)?);
        let v = Matrix::from_vec(rows, cols, r.floats(rows * cols)?);
        store.set_moments(id, m, v);
    }
    if r.at != bytes.len() {
        return Err(KgError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    Ok((header, store))
}

/// Writes via a temporary file in the same directory, then renames.
pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, header: &CheckpointHeader, store: &ParamStore<T>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(header, store))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(CheckpointHeader, ParamStore<T>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| KgError::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| KgError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| KgError::io(path, e))?;
    tmp.persist(path).map_err(|e| KgError::io(path, e.error))?;
    Ok(())
}
