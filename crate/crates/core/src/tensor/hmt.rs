//! `HMT1` binary tensor container.
//!
//! Layout: magic `HMT1`, `u32` rank, `rank × u32` dims, then
//! `product(dims)` little-endian `f32` values in row-major order. A file
//! may hold several records back to back (used by checkpoints).

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HMT1";

pub fn encode(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Parse {
            offset: *pos,
            msg: format!("truncated {what}"),
        })?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn read_u32(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    let b = take(bytes, pos, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// Decodes one record starting at `*pos`, advancing it past the record.
pub fn decode_at(bytes: &[u8], pos: &mut usize) -> Result<Tensor> {
    let start = *pos;
    if take(bytes, pos, 4, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: start,
            msg: "bad magic, expected HMT1".into(),
        });
    }
    let rank = read_u32(bytes, pos, "rank")? as usize;
    if rank > 8 {
        return Err(Error::Parse {
            offset: *pos - 4,
            msg: format!("implausible rank {rank}"),
        });
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(bytes, pos, "dims")? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Parse {
            offset: *pos,
            msg: "element count overflows".into(),
        })?;
    let payload = take(bytes, pos, n.saturating_mul(4), "payload")?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(shape, data)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let t = decode_at(bytes, &mut pos)?;
    if pos != bytes.len() {
        return Err(Error::Parse {
            offset: pos,
            msg: "trailing bytes after tensor".into(),
        });
    }
    Ok(t)
}

pub fn save(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    encode(t, &mut buf);
    let path = path.as_ref();
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::file(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode(&bytes)
}
