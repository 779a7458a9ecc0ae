//! Mask degradation imitating a noisy off-the-shelf parser.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{ProfdError, Result};
use crate::mask::PartMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionMode {
    /// One of the three below, chosen uniformly per image.
    #[default]
    Any,
    Shift,
    Swap,
    Dilate,
}

fn shift(m: &PartMask, dy: isize, dx: isize) -> PartMask {
    let mut out = PartMask::zeros(m.h, m.w, m.n);
    for y in 0..m.h {
        let sy = y as isize - dy;
        if sy < 0 || sy >= m.h as isize {
            continue;
        }
        for x in 0..m.w {
            let sx = x as isize - dx;
            if sx < 0 || sx >= m.w as isize {
                continue;
            }
            for c in 0..m.n {
                out.set(y, x, c, m.get(sy as usize, sx as usize, c));
            }
        }
    }
    out
}

fn swap(m: &mut PartMask, a: usize, b: usize) {
    for px in m.data.chunks_mut(m.n) {
        px.swap(a, b);
    }
}

/// Per-channel square max filter of radius `r`.
fn dilate(m: &PartMask, r: usize) -> PartMask {
    let mut out = PartMask::zeros(m.h, m.w, m.n);
    for y in 0..m.h {
        for x in 0..m.w {
            for c in 0..m.n {
                let mut v = 0.0f32;
                for yy in y.saturating_sub(r)..(y + r + 1).min(m.h) {
                    for xx in x.saturating_sub(r)..(x + r + 1).min(m.w) {
                        v = v.max(m.get(yy, xx, c));
                    }
                }
                out.set(y, x, c, v);
            }
        }
    }
    out
}

/// With probability `noise_rate` per image, degrades its mask in place.
/// Images, labels and ground-truth occlusion flags are left alone.
/// Returns the number of corrupted masks.
pub fn corrupt_masks(samples: &mut [Sample], noise_rate: f64, mode: CorruptionMode, seed: u64) -> Result<usize> {
    if !(0.0..=1.0).contains(&noise_rate) {
        return Err(ProfdError::InvalidInput(format!(
            "noise_rate {noise_rate} outside [0,1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0_77_u64);
    let mut hits = 0;
    for s in samples.iter_mut() {
        // draw even for maskless samples so the pattern does not depend on them
        let hit = rng.random_bool(noise_rate);
        let Some(m) = s.mask.as_mut() else { continue };
        if !hit {
            continue;
        }
        let mode = match mode {
            CorruptionMode::Any => {
                [CorruptionMode::Shift, CorruptionMode::Swap, CorruptionMode::Dilate][rng.random_range(0..3)]
            }
            other => other,
        };
        match mode {
            CorruptionMode::Shift => {
                let my = (m.h / 8).max(1) as i64;
                let mx = (m.w / 8).max(1) as i64;
                let (mut dy, mut dx) = (0, 0);
                while dy == 0 && dx == 0 {
                    dy = rng.random_range(-my..=my);
                    dx = rng.random_range(-mx..=mx);
                }
                *m = shift(m, dy as isize, dx as isize);
            }
            CorruptionMode::Swap => {
                if m.n >= 2 {
                    let a = rng.random_range(0..m.n);
                    let b = (a + rng.random_range(1..m.n)) % m.n;
                    swap(m, a, b);
                }
            }
            CorruptionMode::Dilate => {
                let r = rng.random_range(1..=3);
                *m = dilate(m, r);
            }
            CorruptionMode::Any => unreachable!(),
        }
        hits += 1;
    }
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SyntheticSpec};

    fn samples() -> Vec<Sample> {
        let spec = SyntheticSpec {
            n_ids: 4,
            imgs_per_id: 3,
            occlusion_rate: 0.0,
            ..SyntheticSpec::default()
        };
        generate_dataset(&spec).unwrap().train
    }

    #[test]
    fn zero_rate_is_identity() {
        let orig = samples();
        let mut s = orig.clone();
        assert_eq!(corrupt_masks(&mut s, 0.0, CorruptionMode::Any, 1).unwrap(), 0);
        assert_eq!(s, orig);
    }

    #[test]
    fn forced_swap_exchanges_channels() {
        let orig = samples();
        let mut s = orig.clone();
        assert_eq!(corrupt_masks(&mut s, 1.0, CorruptionMode::Swap, 1).unwrap(), orig.len());
        for (a, b) in orig.iter().zip(&s) {
            let (ma, mb) = (a.mask.as_ref().unwrap(), b.mask.as_ref().unwrap());
            let n = ma.n;
            let moved = (0..n)
                .filter(|&c| (0..ma.h * ma.w).any(|p| ma.data[p * n + c] != mb.data[p * n + c]))
                .count();
            assert!(moved >= 2, "{moved}");
        }
    }

    #[test]
    fn reproducible_under_seed() {
        let mut a = samples();
        let mut b = samples();
        corrupt_masks(&mut a, 0.5, CorruptionMode::Any, 9).unwrap();
        corrupt_masks(&mut b, 0.5, CorruptionMode::Any, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dilation_only_grows() {
        let mut m = PartMask::zeros(5, 5, 1);
        m.set(2, 2, 0, 1.0);
        let d = dilate(&m, 1);
        assert_eq!(d.data.iter().filter(|v| **v == 1.0).count(), 9);
    }

    #[test]
    fn rejects_bad_rate() {
        assert!(corrupt_masks(&mut [], 1.1, CorruptionMode::Any, 0).is_err());
    }
}
