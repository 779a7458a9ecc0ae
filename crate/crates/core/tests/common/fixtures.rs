//! Random inputs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use profd_core::alignment::PatchLabels;
use profd_core::retrieval::EmbeddingSet;
use profd_core::visibility::Embedding;
use profd_core::Mat;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

pub fn unit_rows(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    let mut m = uniform(rng, r, c);
    for mut row in m.rows_mut() {
        let n = row.dot(&row).sqrt().max(1e-9);
        row /= n;
    }
    m
}

/// Patch labels with values in `[0,1]`; roughly a third of the entries are 0.
pub fn labels(rng: &mut ChaCha8Rng, gh: usize, gw: usize, n: usize) -> PatchLabels {
    let m = Mat::from_shape_fn((gh * gw, n), |_| {
        if rng.random_bool(0.33) {
            0.0
        } else {
            rng.random_range(0.0..1.0)
        }
    });
    PatchLabels::from_labels(gh, gw, m)
}

pub fn embedding(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Embedding {
    Embedding {
        global: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        parts: uniform(rng, n, d),
        visibility: (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
    }
}

pub fn embedding_set(rng: &mut ChaCha8Rng, len: usize, d: usize, n: usize, n_ids: u32, n_cams: u32) -> EmbeddingSet {
    let mut set = EmbeddingSet::new(d, n);
    for _ in 0..len {
        let e = embedding(rng, d, n);
        let id = rng.random_range(0..n_ids);
        let cam = rng.random_range(1..=n_cams);
        set.push(e, id, cam).unwrap();
    }
    set
}

use profd_core::decoder::DecoderConfig;
use profd_core::encoder::{EncoderConfig, Image};
use profd_core::model::ModelConfig;
use profd_core::{Dims, PartMask};

/// d = 4, two heads, three parts on a 4 × 2 patch grid.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        dims: Dims {
            img_h: 16,
            img_w: 8,
            patch: 4,
            stride: None,
            d: 4,
            n_parts: 3,
            n_ids: 3,
        },
        encoder: EncoderConfig {
            native_width: 6,
            text_width: 6,
            context_len: 16,
            ..EncoderConfig::default()
        },
        parts: ["head", "torso", "legs"].iter().map(|s| s.to_string()).collect(),
        m_prefix: 2,
        decoder: DecoderConfig {
            layers: 2,
            heads: 2,
            ffn_mult: 2,
            dropout: 0.0,
            ..DecoderConfig::default()
        },
        ..ModelConfig::default()
    }
}

pub fn image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::new(h, w, (0..h * w * 3).map(|_| rng.random_range(0.0..1.0f32)).collect()).unwrap()
}

/// Horizontal bands, one per part, with a random channel blanked half the time.
pub fn band_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, n: usize) -> PartMask {
    let mut m = PartMask::zeros(h, w, n);
    let hidden = rng.random_bool(0.5).then(|| rng.random_range(0..n));
    for y in 0..h {
        let c = (y * n / h).min(n - 1);
        if Some(c) == hidden {
            continue;
        }
        for x in 0..w {
            m.set(y, x, c, 1.0);
        }
    }
    m
}
