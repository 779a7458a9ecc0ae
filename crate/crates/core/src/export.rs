//! Attention-map export as PFM (portable float map) grayscale images.
//!
//! A PFM file is the ASCII header `Pf\n<w> <h>\n<scale>\n` followed by
//! `w·h` float32 values, bottom row first. A negative scale marks
//! little-endian data.

use std::path::Path;

use crate::autograd::Mat;
use crate::encoder::Image;
use crate::error::{ProfdError, Result};
use crate::model::ProfdModel;

pub fn encode_pfm(grid: &Mat) -> Vec<u8> {
    let (h, w) = grid.dim();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(grid[[y, x]] as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Mat> {
    let bad = |offset: usize, reason: &str| ProfdError::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason: reason.to_string(),
    };
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad(pos, "incomplete header"));
        }
        fields.push((
            start,
            std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad(start, "non-ascii header"))?,
        ));
        // exactly one whitespace byte separates the header from the data
        if fields.len() == 4 {
            pos += 1;
        }
    }
    if fields[0].1 != "Pf" {
        return Err(bad(fields[0].0, "expected Pf (grayscale) magic"));
    }
    let num = |i: usize| {
        fields[i]
            .1
            .parse::<usize>()
            .map_err(|_| bad(fields[i].0, "bad dimension"))
    };
    let (w, h) = (num(1)?, num(2)?);
    let scale: f64 = fields[3].1.parse().map_err(|_| bad(fields[3].0, "bad scale"))?;
    let expected = pos + w * h * 4;
    if bytes.len() < expected {
        return Err(ProfdError::Truncated {
            path: path.to_path_buf(),
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    let mut grid = Mat::zeros((h, w));
    for (k, chunk) in bytes[pos..expected].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if scale < 0.0 {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        grid[[h - 1 - k / w, k % w]] = v as f64;
    }
    Ok(grid)
}

pub fn write_pfm(path: &Path, grid: &Mat) -> Result<()> {
    std::fs::write(path, encode_pfm(grid)).map_err(|e| ProfdError::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Mat> {
    let bytes = std::fs::read(path).map_err(|e| ProfdError::io(path, e))?;
    decode_pfm(&bytes, path)
}

/// Softmaxed part-to-patch attention of one image: for every block, one
/// `grid_h × grid_w` map per part.
pub fn attention_grids(model: &ProfdModel, image: &Image) -> Result<Vec<Vec<Mat>>> {
    let dims = model.dims();
    let (gh, gw) = (dims.grid_h(), dims.grid_w());
    let (_, maps) = model.embed_with_maps(image, None)?;
    Ok(maps
        .iter()
        .map(|m| {
            m.rows()
                .into_iter()
                .map(|row| Mat::from_shape_fn((gh, gw), |(y, x)| row[y * gw + x]))
                .collect()
        })
        .collect())
}
