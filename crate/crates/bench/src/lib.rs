//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use profd_core::data::{generate_dataset, Dataset, SyntheticSpec};
use profd_core::retrieval::EmbeddingSet;
use profd_core::train::{TrainConfig, TrainState};
use profd_core::visibility::Embedding;
use profd_core::Mat;

pub fn dataset() -> Dataset {
    generate_dataset(&SyntheticSpec::default()).expect("default spec is valid")
}

pub fn trainer(ds: &Dataset) -> TrainState {
    TrainState::init(TrainConfig::desk(), ds).expect("desk config is valid")
}

/// Random embeddings with ids cycling over `n_ids` and alternating cameras.
pub fn embeddings(n: usize, d: usize, n_parts: usize, n_ids: u32, seed: u64) -> EmbeddingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = EmbeddingSet::new(d, n_parts);
    for k in 0..n {
        let e = Embedding {
            global: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            parts: Mat::from_shape_fn((n_parts, d), |_| rng.random_range(-1.0..1.0)),
            visibility: (0..n_parts).map(|_| rng.random()).collect(),
        };
        set.push(e, k as u32 % n_ids, 1 + (k % 2) as u32)
            .expect("consistent widths");
    }
    set
}
