//! `EIDCKPT1` checkpoints: 8-byte magic, u32 tensor count, then per tensor a
//! u16 name length, UTF-8 name, u8 ndim, ndim × u32 dims and a little-endian
//! f32 payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EIDCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

impl Entry {
    pub fn to_tensor<T: Scalar>(&self, name: &str, expected: Shape) -> Result<Tensor<T>> {
        if self.dims != expected {
            return Err(Error::CheckpointMismatch {
                name: name.to_string(),
                expected: expected.to_vec(),
                found: self.dims.clone(),
            });
        }
        Tensor::from_vec(expected, self.values.iter().map(|&v| T::of(v as f64)).collect())
    }
}

/// Ordered collection of named f32 tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Inserts or replaces an entry.
    pub fn insert(&mut self, name: &str, dims: Vec<usize>, values: Vec<f32>) {
        let entry = Entry {
            name: name.to_string(),
            dims,
            values,
        };
        match self.entries.iter_mut().find(|e| e.name == name) {
            Some(e) => *e = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn insert_tensor<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) {
        let values = t.data().iter().map(|v| v.to_f64_lossy() as f32).collect();
        self.insert(name, t.shape().to_vec(), values);
    }

    /// Small integer-valued metadata vector (architecture, flags).
    pub fn set_meta(&mut self, name: &str, values: &[f64]) {
        self.insert(name, vec![values.len()], values.iter().map(|&v| v as f32).collect());
    }

    pub fn meta(&self, name: &str) -> Option<Vec<f64>> {
        self.get(name).map(|e| e.values.iter().map(|&v| v as f64).collect())
    }

    /// Keeps only entries whose names start with one of `prefixes`.
    pub fn retain_prefixes(&mut self, prefixes: &[&str]) {
        self.entries.retain(|e| prefixes.iter().any(|p| e.name.starts_with(p)));
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.dims.len() as u8);
            for &d in &e.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8).ok_or_else(|| bad("truncated magic"))? != CHECKPOINT_MAGIC {
            return Err(bad("missing EIDCKPT1 magic"));
        }
        let count = cur.u32().ok_or_else(|| bad("truncated count"))?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = cur.u16().ok_or_else(|| bad("truncated name length"))? as usize;
            let name = std::str::from_utf8(cur.take(len).ok_or_else(|| bad("truncated name"))?)
                .map_err(|_| bad("name is not UTF-8"))?
                .to_string();
            let ndim = cur.take(1).ok_or_else(|| bad("truncated ndim"))?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(cur.u32().ok_or_else(|| bad("truncated dims"))? as usize);
            }
            let n: usize = dims.iter().product();
            let payload = cur.take(n * 4).ok_or_else(|| bad("truncated payload"))?;
            let values = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(Entry { name, dims, values });
        }
        if cur.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint { entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes(b.try_into().unwrap()))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}
