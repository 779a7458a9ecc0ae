//! Deterministic synthetic occluded-person benchmark.
//!
//! Every identity is a five-band vertical figure (head, upper torso and
//! arms, lower torso and arms, legs, feet). Colours come from a small shared
//! palette so that no single band identifies a person; textures, band
//! proportions and body width vary per identity. Each image adds pose
//! jitter, a camera colour cast, background clutter and pixel noise. An
//! occluder is a gray rectangle spanning the full width; it overwrites the
//! pixels and zeroes the mask below it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{occluded_from_mask, Dataset, Sample};
use crate::encoder::Image;
use crate::error::{ProfdError, Result};
use crate::mask::PartMask;

/// Nominal share of the figure height taken by each band, top to bottom.
pub const BAND_FRACTIONS: [f64; 5] = [0.15, 0.22, 0.18, 0.33, 0.12];

const PALETTE: [[f32; 3]; 8] = [
    [0.85, 0.15, 0.15],
    [0.15, 0.65, 0.2],
    [0.15, 0.25, 0.85],
    [0.9, 0.8, 0.15],
    [0.75, 0.2, 0.75],
    [0.1, 0.75, 0.8],
    [0.95, 0.55, 0.1],
    [0.95, 0.95, 0.95],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_ids: usize,
    pub imgs_per_id: usize,
    pub n_cams: usize,
    pub occlusion_rate: f64,
    /// Occluder height range in pixels, inclusive. `None` means a quarter
    /// to a half of the image height.
    pub occluder_size_range: Option<(usize, usize)>,
    pub seed: u64,
    pub img_h: usize,
    pub img_w: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_ids: 30,
            imgs_per_id: 8,
            n_cams: 4,
            occlusion_rate: 0.5,
            occluder_size_range: None,
            seed: 7,
            img_h: 64,
            img_w: 32,
        }
    }
}

impl SyntheticSpec {
    pub fn occluder_range(&self) -> (usize, usize) {
        self.occluder_size_range.unwrap_or((self.img_h / 4, self.img_h / 2))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ProfdError::InvalidInput(m));
        if !(0.0..=1.0).contains(&self.occlusion_rate) {
            return bad(format!("occlusion_rate {} outside [0,1]", self.occlusion_rate));
        }
        if self.n_ids < 2 {
            return bad(format!(
                "need at least 2 identities for disjoint splits, got {}",
                self.n_ids
            ));
        }
        if self.imgs_per_id < 2 {
            return bad(format!("need at least 2 images per identity, got {}", self.imgs_per_id));
        }
        if self.n_cams < 2 {
            return bad(format!(
                "need at least 2 cameras for cross-camera queries, got {}",
                self.n_cams
            ));
        }
        if self.img_h < 10 || self.img_w < 5 {
            return bad(format!("image {}x{} too small", self.img_h, self.img_w));
        }
        let (lo, hi) = self.occluder_range();
        if lo == 0 || lo > hi || hi > self.img_h {
            return bad(format!("occluder range ({lo}, {hi}) invalid for height {}", self.img_h));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Texture {
    Solid,
    HStripes { period: usize },
    VStripes { period: usize },
    Checker { period: usize },
}

#[derive(Debug, Clone)]
struct Identity {
    colors: [[f32; 3]; 5],
    accents: [[f32; 3]; 5],
    textures: [Texture; 5],
    fractions: [f64; 5],
    half_width: f64,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn identity(seed: u64, id: u32) -> Identity {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x1d00 + id as u64));
    let mut colors = [[0.0; 3]; 5];
    let mut accents = [[0.0; 3]; 5];
    let mut textures = [Texture::Solid; 5];
    let mut fractions = BAND_FRACTIONS;
    for b in 0..5 {
        colors[b] = PALETTE[rng.random_range(0..PALETTE.len())];
        accents[b] = PALETTE[rng.random_range(0..PALETTE.len())];
        let period = rng.random_range(2..5);
        textures[b] = match rng.random_range(0..4) {
            0 => Texture::Solid,
            1 => Texture::HStripes { period },
            2 => Texture::VStripes { period },
            _ => Texture::Checker { period },
        };
        fractions[b] *= rng.random_range(0.8..1.2);
    }
    let total: f64 = fractions.iter().sum();
    fractions.iter_mut().for_each(|f| *f /= total);
    Identity {
        colors,
        accents,
        textures,
        fractions,
        half_width: rng.random_range(0.26..0.36),
    }
}

fn texel(t: Texture, y: usize, x: usize) -> bool {
    match t {
        Texture::Solid => false,
        Texture::HStripes { period } => (y / period) % 2 == 1,
        Texture::VStripes { period } => (x / period) % 2 == 1,
        Texture::Checker { period } => ((y / period) + (x / period)) % 2 == 1,
    }
}

fn camera_cast(seed: u64, cam: u32) -> [f32; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xca00 + cam as u64));
    [0; 3].map(|_| rng.random_range(0.75..1.25))
}

/// Renders one image, its mask and occlusion ground truth.
fn render(spec: &SyntheticSpec, who: &Identity, cam: u32, rng: &mut ChaCha8Rng) -> (Image, PartMask, Vec<bool>) {
    let (h, w) = (spec.img_h, spec.img_w);
    let mut img = Image::zeros(h, w);
    let mut mask = PartMask::zeros(h, w, 5);

    // background: base tone plus clutter rectangles
    let base: [f32; 3] = [0; 3].map(|_| rng.random_range(0.2..0.8));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                img.set(y, x, c, base[c]);
            }
        }
    }
    for _ in 0..rng.random_range(3..7) {
        let color: [f32; 3] = [0; 3].map(|_| rng.random_range(0.0..1.0));
        let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (rh, rw) = (rng.random_range(2..h / 3 + 3), rng.random_range(2..w / 2 + 3));
        for y in y0..(y0 + rh).min(h) {
            for x in x0..(x0 + rw).min(w) {
                for c in 0..3 {
                    img.set(y, x, c, color[c]);
                }
            }
        }
    }

    // figure
    let top = (h as f64 * rng.random_range(0.02..0.08)).round() as usize;
    let bottom = h - (h as f64 * rng.random_range(0.0..0.05)).round() as usize;
    let centre = w as f64 * (0.5 + rng.random_range(-0.08..0.08));
    let half = w as f64 * who.half_width * rng.random_range(0.9..1.1);
    let x0 = (centre - half).round().max(0.0) as usize;
    let x1 = ((centre + half).round() as usize).min(w);
    let brightness: f32 = rng.random_range(0.8..1.2);
    let cast = camera_cast(spec.seed, cam);
    let span = (bottom - top) as f64;
    let mut y = top;
    let mut edge = top as f64;
    for b in 0..5 {
        edge += span * who.fractions[b] * if b < 4 { rng.random_range(0.92..1.08) } else { 1.0 };
        let end = if b == 4 {
            bottom
        } else {
            (edge.round() as usize).clamp(y + 1, bottom - (4 - b))
        };
        // head and feet are narrower than the trunk
        let inset = if b == 0 || b == 4 { ((x1 - x0) / 4).max(1) } else { 0 };
        for yy in y..end {
            for xx in (x0 + inset)..(x1 - inset).max(x0 + inset + 1).min(w) {
                let col = if texel(who.textures[b], yy - y, xx - x0) {
                    who.accents[b]
                } else {
                    who.colors[b]
                };
                for c in 0..3 {
                    img.set(yy, xx, c, col[c] * brightness);
                }
                mask.set(yy, xx, b, 1.0);
            }
        }
        y = end;
    }

    // camera colour cast and sensor noise
    let noise = Normal::new(0.0f32, 0.04).expect("finite sigma");
    for yy in 0..h {
        for xx in 0..w {
            for c in 0..3 {
                let v = img.px(yy, xx, c) * cast[c] + noise.sample(rng);
                img.set(yy, xx, c, v.clamp(0.0, 1.0));
            }
        }
    }

    if rng.random_bool(spec.occlusion_rate) {
        let (lo, hi) = spec.occluder_range();
        let oh = rng.random_range(lo..=hi);
        let oy = rng.random_range(0..=h - oh);
        let gray: f32 = rng.random_range(0.35..0.65);
        for yy in oy..oy + oh {
            for xx in 0..w {
                let g = (gray + rng.random_range(-0.03..0.03f32)).clamp(0.0, 1.0);
                for c in 0..3 {
                    img.set(yy, xx, c, g);
                }
                for c in 0..5 {
                    mask.set(yy, xx, c, 0.0);
                }
            }
        }
    }
    let occluded = occluded_from_mask(&mask);
    (img, mask, occluded)
}

/// Generates the three splits. The first half of the identities (rounded
/// down) trains; for every remaining identity up to two images from
/// different cameras become queries and the rest form the gallery.
pub fn generate_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let n_train = spec.n_ids / 2;
    let n_query = 2.min(spec.imgs_per_id - 1);
    let mut ds = Dataset::default();
    for idx in 0..spec.n_ids {
        let id = idx as u32 + 1;
        let who = identity(spec.seed, id);
        for k in 0..spec.imgs_per_id {
            let cam = 1 + ((k + idx) % spec.n_cams) as u32;
            let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(spec.seed, id as u64), k as u64 + 1));
            let (image, mask, occluded) = render(spec, &who, cam, &mut rng);
            let sample = Sample {
                name: format!("{id:04}_c{cam}_{k:06}"),
                image,
                id,
                cam,
                mask: Some(mask),
                occluded_parts: Some(occluded),
            };
            if idx < n_train {
                ds.train.push(sample);
            } else if k < n_query {
                ds.query.push(sample);
            } else {
                ds.gallery.push(sample);
            }
        }
    }
    Ok(ds)
}
