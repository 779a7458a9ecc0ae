//! PFMK mask files: `"PFMK"`, then little-endian u32 version, H', W', N,
//! then `H'·W'·N` f32 values, row-major with the channel fastest.

use std::path::Path;

use crate::error::{ProfdError, Result};
use crate::mask::PartMask;

const MAGIC: &[u8; 4] = b"PFMK";
const VERSION: u32 = 1;
const HEADER: usize = 20;

pub fn encode_mask(mask: &PartMask) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + mask.data.len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, mask.h as u32, mask.w as u32, mask.n as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &mask.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"))
}

/// Parses a PFMK buffer; `path` only labels errors.
pub fn decode_mask(bytes: &[u8], path: &Path) -> Result<PartMask> {
    let fmt = |offset: usize, reason: String| ProfdError::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    if bytes.len() < HEADER {
        return Err(ProfdError::Truncated {
            path: path.to_path_buf(),
            expected: HEADER as u64,
            found: bytes.len() as u64,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(fmt(0, format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(fmt(4, format!("unsupported version {version}")));
    }
    let (h, w, n) = (
        u32_at(bytes, 8) as usize,
        u32_at(bytes, 12) as usize,
        u32_at(bytes, 16) as usize,
    );
    for (off, v, what) in [(8, h, "height"), (12, w, "width"), (16, n, "channel count")] {
        if v == 0 {
            return Err(fmt(off, format!("{what} is zero")));
        }
    }
    let count = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(n))
        .ok_or_else(|| fmt(8, format!("dimensions {h}x{w}x{n} overflow")))?;
    let expected = HEADER as u64 + count as u64 * 4;
    if (bytes.len() as u64) < expected {
        return Err(ProfdError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    if bytes.len() as u64 > expected {
        return Err(fmt(
            expected as usize,
            format!("{} trailing bytes", bytes.len() as u64 - expected),
        ));
    }
    let data = bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    PartMask::new(h, w, n, data)
}

pub fn write_mask_file(path: &Path, mask: &PartMask) -> Result<()> {
    std::fs::write(path, encode_mask(mask)).map_err(|e| ProfdError::io(path, e))
}

pub fn read_mask_file(path: &Path) -> Result<PartMask> {
    let bytes = std::fs::read(path).map_err(|e| ProfdError::io(path, e))?;
    decode_mask(&bytes, path)
}

/// Reads a mask and checks its channel count against the configured part count.
pub fn read_mask_file_checked(path: &Path, n_parts: usize) -> Result<PartMask> {
    let m = read_mask_file(path)?;
    if m.n != n_parts {
        return Err(ProfdError::Config(format!(
            "{} has {} channels but {} parts are configured",
            path.display(),
            m.n,
            n_parts
        )));
    }
    Ok(m)
}
