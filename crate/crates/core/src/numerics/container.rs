//! `AUDT` binary tensor container.
//!
//! Layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `AUDT` |
//! | 2     | version (`u16`, currently 1) |
//! | 1     | dtype tag (`1` = f32, `2` = f64) |
//! | 1     | rank |
//! | 8·rank| shape, one `u64` per axis |
//! | ...   | row-major payload |

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AUDT";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

pub fn encode(t: &Tensor, dtype: DType) -> Vec<u8> {
    let width = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let mut out = Vec::with_capacity(8 + 8 * t.rank() + width * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype as u8);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.values() {
        match dtype {
            DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err("missing AUDT magic".into());
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let width = match bytes[6] {
        1 => 4,
        2 => 8,
        t => return Err(format!("unknown dtype tag {t}")),
    };
    let rank = bytes[7] as usize;
    let header = 8 + 8 * rank;
    if bytes.len() < header {
        return Err("truncated shape".into());
    }
    let shape: Vec<usize> = bytes[8..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let n: usize = shape.iter().product();
    let payload = &bytes[header..];
    if payload.len() != n * width {
        return Err(format!(
            "payload has {} bytes, shape {:?} needs {}",
            payload.len(),
            shape,
            n * width
        ));
    }
    let values = if width == 4 {
        payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect()
    } else {
        payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()
    };
    Tensor::new(shape, values).map_err(|e| e.to_string())
}

pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    write_as(path, t, DType::F64)
}

pub fn write_as(path: &Path, t: &Tensor, dtype: DType) -> Result<()> {
    fs::write(path, encode(t, dtype)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::Container {
        path: path.to_path_buf(),
        reason,
    })
}
