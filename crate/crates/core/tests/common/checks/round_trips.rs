//! Write then read for the binary formats and checkpoints.

use rand::Rng;

use crate::common::fixtures::{embedding_set, rng};
use profd_core::data::{decode_mask, encode_mask, generate_dataset, read_mask_file, write_mask_file, SyntheticSpec};
use profd_core::retrieval::{read_embeddings, write_embeddings};
use profd_core::train::{evaluate, load_checkpoint, save_checkpoint, BatchConfig, TrainConfig, TrainState};
use profd_core::PartMask;

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Random masks through the in-memory encoder.
pub fn pfmk_bytes_round_trip() {
    let mut r = rng(52);
    for _ in 0..200 {
        let (h, w, n) = (r.random_range(1..=12), r.random_range(1..=12), r.random_range(1..=6));
        let data: Vec<f32> = (0..h * w * n).map(|_| r.random_range(0.0..=1.0f32)).collect();
        let mask = PartMask::new(h, w, n, data).unwrap();
        let back = decode_mask(&encode_mask(&mask), std::path::Path::new("mem.pfmk")).unwrap();
        assert_eq!((back.h, back.w, back.n), (h, w, n));
        assert_eq!(bits(&back.data), bits(&mask.data));
    }
}

pub fn pfmk_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&SyntheticSpec {
        n_ids: 3,
        imgs_per_id: 3,
        ..SyntheticSpec::default()
    })
    .unwrap();
    for (k, s) in ds.train.iter().enumerate() {
        let m = s.mask.as_ref().unwrap();
        let path = dir.path().join(format!("{k}.pfmk"));
        write_mask_file(&path, m).unwrap();
        let back = read_mask_file(&path).unwrap();
        assert_eq!((back.h, back.w, back.n), (m.h, m.w, m.n));
        assert_eq!(bits(&back.data), bits(&m.data));
    }
}

pub fn pfem_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(51);
    for k in 0..10 {
        let set = embedding_set(&mut r, 1 + k * 3, 1 + k % 8, 1 + k % 5, 7, 4).quantized();
        let path = dir.path().join(format!("{k}.pfem"));
        write_embeddings(&path, &set).unwrap();
        let back = read_embeddings(&path).unwrap();
        assert_eq!(back.d, set.d);
        assert_eq!(back.n_parts, set.n_parts);
        assert_eq!(back.ids(), set.ids());
        assert_eq!(back.cams(), set.cams());
        for (a, b) in back.items.iter().zip(&set.items) {
            let f = |e: &profd_core::visibility::Embedding| -> Vec<u64> {
                e.global
                    .iter()
                    .chain(e.parts.iter())
                    .chain(e.visibility.iter())
                    .map(|v| v.to_bits())
                    .collect()
            };
            assert_eq!(f(&a.embedding), f(&b.embedding));
        }
    }
}

fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    cfg.dims.img_h = 32;
    cfg.dims.img_w = 16;
    cfg.dims.d = 16;
    cfg.encoder.native_width = 32;
    cfg.encoder.text_width = 16;
    cfg.decoder.heads = 2;
    cfg.decoder.layers = 1;
    cfg.batch = BatchConfig { p: 2, k: 2 };
    cfg.schedule.epochs = 2;
    cfg
}

pub fn checkpoint_round_trip_gives_identical_eval() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&SyntheticSpec {
        n_ids: 6,
        imgs_per_id: 4,
        img_h: 32,
        img_w: 16,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let mut st = TrainState::init(small_config(), &ds).unwrap();
    st.train_epoch(&ds, &mut |_| {}).unwrap();
    let path = dir.path().join("model.pfck");
    save_checkpoint(&path, &st).unwrap();
    let mut back = load_checkpoint(&path).unwrap();

    assert_eq!(back.epoch, st.epoch);
    assert_eq!(back.step, st.step);
    for ((_, na, a), (_, nb, b)) in st.model.store.iter().zip(back.model.store.iter()) {
        assert_eq!(na, nb);
        assert!(
            a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()),
            "{na} differs"
        );
    }

    for binarize in [false, true] {
        let e1 = evaluate(&st.model, &ds, binarize).unwrap();
        let e2 = evaluate(&back.model, &ds, binarize).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1.metrics.map.to_bits(), e2.metrics.map.to_bits());
    }

    // training resumes identically
    st.train_epoch(&ds, &mut |_| {}).unwrap();
    back.train_epoch(&ds, &mut |_| {}).unwrap();
    for ((_, name, a), (_, _, b)) in st.model.store.iter().zip(back.model.store.iter()) {
        assert!(
            a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()),
            "{name} diverged"
        );
    }
    assert_eq!(st.bank_g, back.bank_g);
    assert_eq!(st.bank_p, back.bank_p);
}
