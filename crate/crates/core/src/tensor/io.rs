//! Raw tensor dumps: `EIDTNSR1` magic, u8 dtype (0 = f32, 1 = f64), u8 ndim,
//! ndim × u32 dims, little-endian payload.

use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const TENSOR_MAGIC: &[u8; 8] = b"EIDTNSR1";

pub fn encode_tensor<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 2 + 16 + t.numel() * std::mem::size_of::<T>());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(T::DTYPE);
    out.push(4);
    for d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Decodes a dump of either dtype into `T`. Fewer than four dims are padded
/// with leading 1s, so an H×W map loads as 1×1×H×W.
pub fn decode_tensor<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Tensor<T>> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 10 || &bytes[..8] != TENSOR_MAGIC {
        return Err(bad("missing EIDTNSR1 magic"));
    }
    let dtype = bytes[8];
    let ndim = bytes[9] as usize;
    if ndim > 4 {
        return Err(bad("more than four dimensions"));
    }
    let header = 10 + 4 * ndim;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let mut shape = [1usize; 4];
    for i in 0..ndim {
        let o = 10 + 4 * i;
        shape[4 - ndim + i] = u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    }
    let count: usize = shape.iter().product();
    let width = match dtype {
        0 => 4,
        1 => 8,
        _ => return Err(bad("unknown dtype")),
    };
    let payload = &bytes[header..];
    if payload.len() != count * width {
        return Err(bad("payload length does not match dims"));
    }
    let data = payload
        .chunks_exact(width)
        .map(|c| {
            if width == 4 {
                T::of(f32::read_le(c) as f64)
            } else {
                T::of(f64::read_le(c))
            }
        })
        .collect();
    Tensor::from_vec(shape, data)
}

pub fn write_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}
