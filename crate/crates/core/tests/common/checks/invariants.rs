//! Structural invariants as plain randomized loops.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::fixtures::{rng, unit_rows};
use profd_core::data::{generate_dataset, SyntheticSpec};
use profd_core::decoder::diversity_loss;
use profd_core::memory::MemoryBank;
use profd_core::train::{BatchConfig, TrainConfig, TrainState};
use profd_core::visibility::{pairwise_distance, Embedding};
use profd_core::{Mat, Tape};

const DRAWS: usize = 1000;

pub fn softmax_rows_sum_to_one() {
    let mut r = rng(31);
    for _ in 0..DRAWS {
        let (rows, cols) = (r.random_range(1..=6), r.random_range(1..=20));
        let scale = [1.0, 10.0, 300.0][r.random_range(0..3)];
        let x = Mat::from_shape_fn((rows, cols), |_| r.random_range(-scale..scale));
        let tape = Tape::new();
        for row in tape.constant(x).softmax_rows().value().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
    }
}

pub fn diversity_in_range() {
    let mut r = rng(32);
    for draw in 0..DRAWS {
        let (n, d) = (r.random_range(2..=6), r.random_range(1..=8));
        let mut parts = Mat::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0));
        // some draws repeat or negate a row to reach the upper end
        if draw % 4 == 0 {
            let first = parts.row(0).to_owned();
            let sign = if draw % 8 == 0 { -1.0 } else { 1.0 };
            parts.row_mut(n - 1).assign(&(&first * sign));
        }
        let l = diversity_loss(&parts);
        assert!((0.0..=0.5 + 1e-12).contains(&l), "L_div {l}");
    }
}

pub fn memory_update_one_row_unit_norm() {
    let mut r = rng(33);
    for _ in 0..DRAWS {
        let (c, w) = (r.random_range(1..=6), r.random_range(2..=8));
        let ids: Vec<usize> = (0..c).collect();
        let m = r.random_range(0.0..0.99);
        let mut bank = MemoryBank::from_features(&unit_rows(&mut r, c, w), &ids, c, m, 0.05).unwrap();
        let before = bank.centroids.clone();
        let y = r.random_range(0..c);
        let feat = unit_rows(&mut r, 1, w).row(0).to_owned();
        bank.update(y, feat.view(), m).unwrap();
        for k in 0..c {
            if k != y {
                let same = bank
                    .centroids
                    .row(k)
                    .iter()
                    .zip(before.row(k))
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                assert!(same, "row {k} changed while updating {y}");
            }
            let norm = bank.centroids.row(k).dot(&bank.centroids.row(k)).sqrt();
            assert!((norm - 1.0).abs() < 1e-5, "row {k} norm {norm}");
        }
    }
}

/// A part whose combined visibility weight is zero cannot move the distance.
pub fn masked_parts_have_no_influence() {
    let mut r = rng(41);
    for draw in 0..DRAWS {
        let d = r.random_range(1..=8);
        let n = r.random_range(1..=5);
        let binarize = draw % 2 == 0;
        let rand_emb = |r: &mut ChaCha8Rng| Embedding {
            global: (0..d).map(|_| r.random_range(-1.0..1.0)).collect(),
            parts: Mat::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0)),
            visibility: (0..n).map(|_| r.random_range(0.0..1.0)).collect(),
        };
        let mut q = rand_emb(&mut r);
        let g = rand_emb(&mut r);
        let hidden = r.random_range(0..n);
        // zero weight on one side: exactly 0 (soft) or below threshold (binary)
        q.visibility[hidden] = if binarize { r.random_range(0.0..0.5) } else { 0.0 };
        let base = pairwise_distance(&q, &g, binarize).unwrap();
        let (mut q2, mut g2) = (q.clone(), g.clone());
        q2.parts.row_mut(hidden).mapv_inplace(|_| r.random_range(-10.0..10.0));
        g2.parts.row_mut(hidden).mapv_inplace(|_| r.random_range(-10.0..10.0));
        let moved = pairwise_distance(&q2, &g2, binarize).unwrap();
        assert_eq!(base.to_bits(), moved.to_bits(), "draw {draw}: {base} vs {moved}");

        // control: flipping a visible part does move it
        if let Some(v) = (0..n).find(|&i| q.visibility[i] * g.visibility[i] > 0.1 && !binarize) {
            let mut q3 = q.clone();
            q3.parts.row_mut(v).mapv_inplace(|x| -x);
            assert_ne!(pairwise_distance(&q3, &g, false).unwrap(), base);
        }
    }
}

pub fn text_encoder_frozen_over_training() {
    let ds = generate_dataset(&SyntheticSpec {
        n_ids: 6,
        imgs_per_id: 4,
        img_h: 32,
        img_w: 16,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let mut cfg = TrainConfig::desk();
    cfg.dims.img_h = 32;
    cfg.dims.img_w = 16;
    cfg.dims.d = 16;
    cfg.encoder.native_width = 32;
    cfg.encoder.text_width = 16;
    cfg.decoder.heads = 2;
    cfg.decoder.layers = 1;
    cfg.batch = BatchConfig { p: 2, k: 2 };
    let mut st = TrainState::init(cfg, &ds).unwrap();
    let frozen: Vec<Mat> = st.model.enc.text.frozen_weights().into_iter().cloned().collect();
    let prefix_id = st.model.prompts.prefix.unwrap();
    let prefix0 = st.model.store.get(prefix_id).clone();

    let labels = ds.train_labels();
    let mut batch = Vec::new();
    for y in [0, 1] {
        batch.extend(
            labels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == y)
                .take(2)
                .map(|(i, _)| i),
        );
    }
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        st.step(&ds, &labels, &batch, 1e-3, &mut r).unwrap();
    }
    let after = st.model.enc.text.frozen_weights();
    assert_eq!(frozen.len(), after.len());
    for (a, b) in frozen.iter().zip(after) {
        assert!(
            a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()),
            "text weight changed"
        );
    }
    assert_ne!(&prefix0, st.model.store.get(prefix_id), "prefix should train");
}
