//! `PBAG` binary bag files: magic, `u16` version, `u32` N, `u32` d, then
//! N·d little-endian `f32` features (row-major) and N `(x, y)` `f32` pairs.

use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::PatchBag;
use crate::numkit::Matrix;

pub const MAGIC: &[u8; 4] = b"PBAG";
pub const VERSION: u16 = 1;
const HEADER: usize = 4 + 2 + 4 + 4;

pub fn encoded_len(n: usize, d: usize) -> usize {
    HEADER + 4 * n * d + 8 * n
}

pub fn encode_bag(bag: &PatchBag) -> Vec<u8> {
    let (n, d) = (bag.len(), bag.dim());
    let mut out = Vec::with_capacity(encoded_len(n, d));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for v in bag.features.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in &bag.coords {
        out.extend_from_slice(&c[0].to_le_bytes());
        out.extend_from_slice(&c[1].to_le_bytes());
    }
    out
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

/// Decodes a bag; `path` only labels errors and `bag_id` names the result.
pub fn decode_bag(bytes: &[u8], path: &Path, bag_id: &str) -> Result<PatchBag> {
    let truncated = |expected: usize| Error::Truncated { path: path.into(), expected: expected as u64, found: bytes.len() as u64 };
    if bytes.len() < 4 {
        return Err(if MAGIC.starts_with(bytes) { truncated(HEADER) } else { Error::BadMagic { path: path.into() } });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic { path: path.into() });
    }
    if bytes.len() < HEADER {
        return Err(truncated(HEADER));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Version { path: path.into(), found: version, supported: VERSION });
    }
    let (n, d) = (u32_at(bytes, 6) as usize, u32_at(bytes, 10) as usize);
    let expected = encoded_len(n, d);
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(Error::Schema(format!(
            "{}: {} trailing bytes after a {n}×{d} bag",
            path.display(),
            bytes.len() - expected
        )));
    }
    let feats: Vec<f32> = (0..n * d).map(|i| f32_at(bytes, HEADER + 4 * i)).collect();
    let base = HEADER + 4 * n * d;
    let coords = (0..n).map(|i| [f32_at(bytes, base + 8 * i), f32_at(bytes, base + 8 * i + 4)]).collect();
    PatchBag::new(bag_id, Matrix::from_vec(n, d, feats), coords)
}

pub fn write_bag(path: &Path, bag: &PatchBag) -> Result<()> {
    std::fs::write(path, encode_bag(bag)).map_err(|e| Error::io(path, e))
}

/// Reads a bag; its id is the file stem.
pub fn read_bag(path: &Path) -> Result<PatchBag> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("bag");
    decode_bag(&bytes, path, id)
}
