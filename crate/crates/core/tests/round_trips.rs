//! File formats and checkpoints survive write then read unchanged.

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::checks::round_trips;
use profd_core::data::{decode_mask, encode_mask};
use profd_core::PartMask;

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pfmk_bytes_round_trip(h in 1..=12usize, w in 1..=12usize, n in 1..=6usize, seed in any::<u64>()) {
        use rand::Rng;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..h * w * n).map(|_| r.random_range(0.0..=1.0f32)).collect();
        let mask = PartMask::new(h, w, n, data).unwrap();
        let back = decode_mask(&encode_mask(&mask), std::path::Path::new("mem.pfmk")).unwrap();
        prop_assert_eq!((back.h, back.w, back.n), (h, w, n));
        prop_assert_eq!(bits(&back.data), bits(&mask.data));
    }
}

#[test]
fn pfmk_bytes_round_trip_loop() {
    round_trips::pfmk_bytes_round_trip();
}

#[test]
fn pfmk_file_round_trip() {
    round_trips::pfmk_file_round_trip();
}

#[test]
fn pfem_file_round_trip() {
    round_trips::pfem_file_round_trip();
}

#[test]
fn checkpoint_round_trip_gives_identical_eval() {
    round_trips::checkpoint_round_trip_gives_identical_eval();
}
