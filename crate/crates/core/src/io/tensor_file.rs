//! `BTRT` tensor files: magic, `u16` version, `u16` order, `order` × `u64`
//! dims, then the values in mode-1-major order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_bytes, write_atomic};
use crate::tensor::DenseTensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"BTRT";
pub const TENSOR_FORMAT_VERSION: u16 = 1;

pub fn encode_tensor(t: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.order() + 8 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.order() as u16).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn truncated(path: &Path, expected: usize, found: usize) -> Error {
    Error::Truncated {
        path: path.to_path_buf(),
        expected: expected as u64,
        found: found as u64,
    }
}

/// `path` only labels errors.
pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<DenseTensor> {
    if bytes.len() < 4 || &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf() });
    }
    if bytes.len() < 8 {
        return Err(truncated(path, 8, bytes.len()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != TENSOR_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: TENSOR_FORMAT_VERSION,
        });
    }
    let order = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let header = 8 + 8 * order;
    if bytes.len() < header {
        return Err(truncated(path, header, bytes.len()));
    }
    let dims: Vec<usize> = bytes[8..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|l| l.checked_mul(8))
        .ok_or_else(|| Error::Parse { path: path.to_path_buf(), msg: format!("dims {dims:?} overflow") })?;
    let expected = header + len;
    if bytes.len() < expected {
        return Err(truncated(path, expected, bytes.len()));
    }
    if bytes.len() > expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            msg: format!("{} trailing bytes after the payload", bytes.len() - expected),
        });
    }
    let values = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseTensor::new(dims, values)
}

pub fn write_tensor(t: &DenseTensor, path: &Path) -> Result<()> {
    write_atomic(path, &encode_tensor(t))
}

pub fn read_tensor(path: &Path) -> Result<DenseTensor> {
    decode_tensor(&read_bytes(path)?, path)
}
