//! Training-time augmentation: horizontal flip, padded random crop and
//! random erasing, each applied independently with its own probability.
//! Erasing touches the image only; the mask still shows the hidden part.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Image;
use crate::mask::PartMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_p: f64,
    pub crop_p: f64,
    pub erase_p: f64,
    /// Padding of the random crop, as a fraction of each side.
    pub crop_pad: f64,
    pub erase_area: (f64, f64),
    pub erase_aspect: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_p: 0.5,
            crop_p: 0.5,
            erase_p: 0.5,
            crop_pad: 0.1,
            erase_area: (0.02, 0.4),
            erase_aspect: (0.3, 3.3),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            flip_p: 0.0,
            crop_p: 0.0,
            erase_p: 0.0,
            ..Self::default()
        }
    }
}

fn flip_image(img: &mut Image) {
    let w = img.w;
    for y in 0..img.h {
        for x in 0..w / 2 {
            for c in 0..3 {
                let a = img.px(y, x, c);
                let b = img.px(y, w - 1 - x, c);
                img.set(y, x, c, b);
                img.set(y, w - 1 - x, c, a);
            }
        }
    }
}

fn translate_image(img: &Image, dy: isize, dx: isize) -> Image {
    let mut out = Image::zeros(img.h, img.w);
    for y in 0..img.h as isize {
        for x in 0..img.w as isize {
            let (sy, sx) = (y - dy, x - dx);
            if sy >= 0 && sx >= 0 && sy < img.h as isize && sx < img.w as isize {
                for c in 0..3 {
                    out.set(y as usize, x as usize, c, img.px(sy as usize, sx as usize, c));
                }
            }
        }
    }
    out
}

fn translate_mask(m: &PartMask, dy: isize, dx: isize) -> PartMask {
    let mut out = PartMask::zeros(m.h, m.w, m.n);
    for y in 0..m.h as isize {
        for x in 0..m.w as isize {
            let (sy, sx) = (y - dy, x - dx);
            if sy >= 0 && sx >= 0 && sy < m.h as isize && sx < m.w as isize {
                for c in 0..m.n {
                    out.set(y as usize, x as usize, c, m.get(sy as usize, sx as usize, c));
                }
            }
        }
    }
    out
}

pub fn augment<R: Rng>(
    image: &Image,
    mask: Option<&PartMask>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (Image, Option<PartMask>) {
    let mut img = image.clone();
    let mut mask = mask.cloned();
    if rng.random_bool(cfg.flip_p) {
        flip_image(&mut img);
        if let Some(m) = mask.as_mut() {
            m.flip_horizontal();
        }
    }
    if rng.random_bool(cfg.crop_p) {
        // zero-pad then crop back to size, i.e. a bounded translation
        let py = (img.h as f64 * cfg.crop_pad).round() as i64;
        let px = (img.w as f64 * cfg.crop_pad).round() as i64;
        let dy = rng.random_range(-py..=py) as isize;
        let dx = rng.random_range(-px..=px) as isize;
        img = translate_image(&img, dy, dx);
        mask = mask.map(|m| translate_mask(&m, dy, dx));
    }
    if rng.random_bool(cfg.erase_p) {
        let area = (img.h * img.w) as f64;
        for _ in 0..10 {
            let target = area * rng.random_range(cfg.erase_area.0..=cfg.erase_area.1);
            let aspect = rng.random_range(cfg.erase_aspect.0..=cfg.erase_aspect.1);
            let eh = (target * aspect).sqrt().round() as usize;
            let ew = (target / aspect).sqrt().round() as usize;
            if eh == 0 || ew == 0 || eh >= img.h || ew >= img.w {
                continue;
            }
            let y0 = rng.random_range(0..=img.h - eh);
            let x0 = rng.random_range(0..=img.w - ew);
            for y in y0..y0 + eh {
                for x in x0..x0 + ew {
                    for c in 0..3 {
                        img.set(y, x, c, rng.random_range(0.0..1.0));
                    }
                }
            }
            break;
        }
    }
    (img, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp() -> (Image, PartMask) {
        let img = Image::new(4, 6, (0..72).map(|v| v as f32 / 72.0).collect()).unwrap();
        let mut m = PartMask::zeros(4, 6, 2);
        m.set(0, 0, 1, 1.0);
        (img, m)
    }

    #[test]
    fn disabled_is_identity() {
        let (img, m) = ramp();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, b) = augment(&img, Some(&m), &AugmentConfig::none(), &mut rng);
        assert_eq!(a, img);
        assert_eq!(b.unwrap(), m);
    }

    #[test]
    fn flip_moves_image_and_mask_together() {
        let (img, m) = ramp();
        let cfg = AugmentConfig {
            flip_p: 1.0,
            ..AugmentConfig::none()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, b) = augment(&img, Some(&m), &cfg, &mut rng);
        assert_eq!(a.px(0, 5, 0), img.px(0, 0, 0));
        assert_eq!(b.unwrap().get(0, 5, 1), 1.0);
    }

    #[test]
    fn erasing_leaves_mask_alone() {
        let (img, m) = ramp();
        let cfg = AugmentConfig {
            erase_p: 1.0,
            erase_area: (0.2, 0.3),
            ..AugmentConfig::none()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = augment(&img, Some(&m), &cfg, &mut rng);
        assert_ne!(a, img);
        assert_eq!(b.unwrap(), m);
    }
}
