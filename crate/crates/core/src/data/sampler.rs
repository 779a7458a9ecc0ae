//! P identities × K images batch construction.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

/// One epoch of PK batches over sample indices. Identities with fewer than
/// `k` samples are padded by resampling; each identity contributes
/// `⌊count/k⌋` chunks (leftovers sit out this epoch) and batches are formed
/// while `p` identities still have chunks left. With fewer than `p` identities overall, every batch uses all
/// of them.
pub fn pk_batches<R: Rng>(labels: &[usize], p: usize, k: usize, rng: &mut R) -> Vec<Vec<usize>> {
    assert!(p > 0 && k > 0, "P and K must be positive");
    let mut by_id: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_id.entry(l).or_default().push(i);
    }
    let p = p.min(by_id.len());
    let mut chunks: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
    for (id, mut idxs) in by_id {
        if idxs.len() < k {
            let extra: Vec<usize> = (0..k - idxs.len())
                .map(|_| idxs[rng.random_range(0..idxs.len())])
                .collect();
            idxs.extend(extra);
        }
        idxs.shuffle(rng);
        let n_chunks = idxs.len() / k;
        let c: Vec<Vec<usize>> = (0..n_chunks).map(|j| idxs[j * k..(j + 1) * k].to_vec()).collect();
        chunks.insert(id, c);
    }
    let mut batches = Vec::new();
    loop {
        let mut avail: Vec<usize> = chunks
            .iter()
            .filter(|(_, c)| !c.is_empty())
            .map(|(id, _)| *id)
            .collect();
        if avail.len() < p || p == 0 {
            break;
        }
        avail.shuffle(rng);
        let mut batch = Vec::with_capacity(p * k);
        for id in &avail[..p] {
            batch.extend(chunks.get_mut(id).expect("listed").pop().expect("non-empty"));
        }
        batches.push(batch);
    }
    batches
}
