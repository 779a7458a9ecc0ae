//! Market1501-style directory layout.
//!
//! ```text
//! root/bounding_box_train/<id:4>_c<cam><anything>.{jpg,png}
//! root/query/...
//! root/bounding_box_test/...
//! root/masks/<split dir>/<stem>.pfmk     (optional)
//! ```

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{ImageBuffer, Rgb, RgbImage};
use log::warn;

use super::pfmk::{read_mask_file_checked, write_mask_file};
use super::{occluded_from_mask, Dataset, Sample};
use crate::dims::Dims;
use crate::encoder::Image;
use crate::error::{ProfdError, Result};

/// Train, query and gallery directory names, in that order.
pub const SPLIT_DIRS: [&str; 3] = ["bounding_box_train", "query", "bounding_box_test"];

/// Parses `<id:4>_c<cam>…`; `None` for anything else.
pub fn parse_name(stem: &str) -> Option<(u32, u32)> {
    let (id, rest) = stem.split_once('_')?;
    if id.len() != 4 || !id.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let rest = rest.strip_prefix('c')?;
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    Some((id.parse().ok()?, digits.parse().ok()?))
}

/// Reads an image file as RGB in `[0,1]`, resized to the configured size.
pub fn load_image(path: &Path, dims: &Dims) -> Result<Image> {
    let img = image::open(path)
        .map_err(|source| ProfdError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let img = if img.height() as usize != dims.img_h || img.width() as usize != dims.img_w {
        image::imageops::resize(&img, dims.img_w as u32, dims.img_h as u32, FilterType::Triangle)
    } else {
        img
    };
    let data = img.as_raw().iter().map(|v| *v as f32 / 255.0).collect();
    Image::new(dims.img_h, dims.img_w, data)
}

fn load_split(root: &Path, split: &str, dims: &Dims) -> Result<Vec<Sample>> {
    let dir = root.join(split);
    let entries = std::fs::read_dir(&dir).map_err(|e| ProfdError::io(&dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png"))
        })
        .collect();
    paths.sort();
    let mask_dir = root.join("masks").join(split);
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let Some((id, cam)) = parse_name(&stem) else {
            warn!("skipping {}: name is not <id:4>_c<cam>...", path.display());
            continue;
        };
        let image = load_image(&path, dims)?;
        let mask_path = mask_dir.join(format!("{stem}.pfmk"));
        let mask = if mask_path.exists() {
            Some(read_mask_file_checked(&mask_path, dims.n_parts)?.resize_bilinear(dims.img_h, dims.img_w))
        } else {
            None
        };
        let occluded_parts = mask.as_ref().map(occluded_from_mask);
        out.push(Sample {
            name: stem,
            image,
            id,
            cam,
            mask,
            occluded_parts,
        });
    }
    if out.is_empty() {
        return Err(ProfdError::InvalidInput(format!(
            "split {} has no usable images",
            dir.display()
        )));
    }
    Ok(out)
}

/// Loads all three splits, resizing images (and masks) to the configured size.
pub fn load_dataset(root: &Path, dims: &Dims) -> Result<Dataset> {
    dims.validate()?;
    let ds = Dataset {
        train: load_split(root, SPLIT_DIRS[0], dims)?,
        query: load_split(root, SPLIT_DIRS[1], dims)?,
        gallery: load_split(root, SPLIT_DIRS[2], dims)?,
    };
    if !ds.has_masks() {
        warn!("{}: some images have no mask file", root.display());
    }
    Ok(ds)
}

fn to_rgb8(img: &Image) -> RgbImage {
    let raw = img
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    ImageBuffer::<Rgb<u8>, _>::from_raw(img.w as u32, img.h as u32, raw).expect("buffer sized h*w*3")
}

/// Writes PNG images and PFMK masks in the layout [`load_dataset`] reads.
pub fn save_dataset(root: &Path, ds: &Dataset) -> Result<()> {
    for (split, samples) in SPLIT_DIRS.iter().zip([&ds.train, &ds.query, &ds.gallery]) {
        let dir = root.join(split);
        let mdir = root.join("masks").join(split);
        std::fs::create_dir_all(&dir).map_err(|e| ProfdError::io(&dir, e))?;
        std::fs::create_dir_all(&mdir).map_err(|e| ProfdError::io(&mdir, e))?;
        for s in samples.iter() {
            let path = dir.join(format!("{}.png", s.name));
            to_rgb8(&s.image).save(&path).map_err(|source| ProfdError::Image {
                path: path.clone(),
                source,
            })?;
            if let Some(m) = &s.mask {
                write_mask_file(&mdir.join(format!("{}.pfmk", s.name)), m)?;
            }
        }
    }
    Ok(())
}
