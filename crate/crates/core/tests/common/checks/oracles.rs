//! Library kernels against the loop oracles on random small instances.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::common::fixtures::{embedding_set, labels, rng, uniform};
use crate::common::oracle::{self, max_abs, MhaWeights, Side};
use profd_core::decoder::{
    reverse_cross_attention, semantic_attention, spatial_attention, DecoderConfig, HybridDecoder, MhaParams,
    SpatialParams,
};
use profd_core::memory::weighted_average_pool_var;
use profd_core::objectives::triplet_loss;
use profd_core::params::{Dropout, LayerNorm, ParamStore, LN_EPS};
use profd_core::retrieval::{cmc_map, distance_matrix, RANKS};
use profd_core::{Mat, Tape};

const INSTANCES: usize = 100;
const TOL: f64 = 1e-6;

fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for m in store.values_mut() {
        m.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    }
}

fn mha_weights(store: &ParamStore, p: &MhaParams) -> MhaWeights {
    let get = |l: &profd_core::params::Linear| (store.get(l.w).clone(), store.get(l.b.expect("bias")).clone());
    let (wq, bq) = get(&p.q);
    let (wk, bk) = get(&p.k);
    let (wv, bv) = get(&p.v);
    let (wo, bo) = get(&p.o);
    MhaWeights {
        wq,
        bq,
        wk,
        bk,
        wv,
        bv,
        wo,
        bo,
        heads: p.heads,
    }
}

/// `d ∈ {2,4,6,8}` together with a head count that divides it.
fn width_and_heads(rng: &mut ChaCha8Rng) -> (usize, usize) {
    let d = 2 * rng.random_range(1..=4);
    let divisors: Vec<usize> = (1..=d).filter(|h| d % h == 0).collect();
    (d, divisors[rng.random_range(0..divisors.len())])
}

fn ln_values(store: &ParamStore, ln: &LayerNorm) -> (Mat, Mat) {
    (store.get(ln.gamma).clone(), store.get(ln.beta).clone())
}

pub fn spatial_attention_matches_loops() {
    let mut r = rng(11);
    for _ in 0..INSTANCES {
        let (d, heads) = width_and_heads(&mut r);
        let n = r.random_range(1..=3);
        let hw = r.random_range(1..=16);
        let mut store = ParamStore::new();
        let p = SpatialParams {
            wk: store.add("wk", uniform(&mut r, d, d)),
            wv: store.add("wv", uniform(&mut r, d, d)),
            heads,
        };
        let prompts = uniform(&mut r, n, d);
        let patches = uniform(&mut r, hw, d);
        let tape = Tape::new();
        let b = store.bind(&tape);
        let got = spatial_attention(
            &p,
            &b,
            tape.constant(prompts.clone()),
            tape.constant(patches.clone()),
            &mut Dropout::eval(),
        )
        .unwrap();
        let (out, aff) = oracle::spatial(&prompts, &patches, store.get(p.wk), store.get(p.wv), heads);
        assert!(max_abs(&got.out.value(), &out) < TOL);
        assert!(max_abs(&got.affinity.value(), &aff) < TOL);
        for w in &got.weights {
            for row in w.rows() {
                assert!((row.sum() - 1.0).abs() < TOL);
            }
        }
    }
}

pub fn semantic_attention_matches_loops() {
    let mut r = rng(12);
    for _ in 0..INSTANCES {
        let (d, heads) = width_and_heads(&mut r);
        let n = r.random_range(1..=3);
        let hw = r.random_range(1..=16);
        let mut store = ParamStore::new();
        let p = MhaParams::new(&mut store, &mut r, "sea", d, heads);
        randomize(&mut store, &mut r);
        let prompts = uniform(&mut r, n, d);
        let patches = uniform(&mut r, hw, d);
        let tape = Tape::new();
        let b = store.bind(&tape);
        let got = semantic_attention(
            &p,
            &b,
            tape.constant(prompts.clone()),
            tape.constant(patches.clone()),
            &mut Dropout::eval(),
        )
        .unwrap();
        let (out, maps) = oracle::mha(&mha_weights(&store, &p), &prompts, &patches);
        assert!(max_abs(&got.out.value(), &out) < TOL);
        assert_eq!(got.weights.len(), maps.len());
        for (a, b) in got.weights.iter().zip(&maps) {
            assert!(max_abs(a, b) < TOL);
        }
    }
}

pub fn reverse_attention_matches_loops() {
    let mut r = rng(13);
    for seed in 0..INSTANCES as u64 {
        let (d, heads) = width_and_heads(&mut r);
        let n = r.random_range(1..=3);
        let hw = r.random_range(1..=16);
        let mut store = ParamStore::new();
        let cfg = DecoderConfig {
            layers: 1,
            heads,
            ffn_mult: 2,
            dropout: 0.0,
            ..DecoderConfig::default()
        };
        let dec = HybridDecoder::new(&mut store, cfg, d, seed).unwrap();
        randomize(&mut store, &mut r);
        let blk = &dec.blocks[0];
        let prompts = uniform(&mut r, n, d);
        let patches = uniform(&mut r, hw, d);
        let tape = Tape::new();
        let b = store.bind(&tape);
        let got = reverse_cross_attention(
            blk,
            &b,
            tape.constant(patches.clone()),
            tape.constant(prompts.clone()),
            &mut Dropout::eval(),
        )
        .unwrap();
        let (g1, b1) = ln_values(&store, &blk.ln_rev_pat);
        let (g2, b2) = ln_values(&store, &blk.ln_rev_pro);
        let q = oracle::layer_norm(&patches, &g1, &b1, LN_EPS);
        let kv = oracle::layer_norm(&prompts, &g2, &b2, LN_EPS);
        let (att, maps) = oracle::mha(&mha_weights(&store, &blk.rev), &q, &kv);
        let expect = &patches + &att;
        assert!(max_abs(&got.out.value(), &expect) < TOL);
        for (a, b) in got.weights.iter().zip(&maps) {
            assert!(max_abs(a, b) < TOL);
        }
    }
}

pub fn weighted_average_pool_matches_loops() {
    let mut r = rng(14);
    for _ in 0..INSTANCES {
        let d = r.random_range(1..=8);
        let n = r.random_range(1..=3);
        let (gh, gw) = (r.random_range(1..=4), r.random_range(1..=4));
        let patches = uniform(&mut r, gh * gw, d);
        let lab = labels(&mut r, gh, gw, n);
        let tape = Tape::new();
        let got = weighted_average_pool_var(tape.constant(patches.clone()), &lab).value();
        assert!(max_abs(&got, &oracle::wap(&patches, &lab.labels)) < TOL);
    }
}

pub fn distance_matrix_matches_loops() {
    let mut r = rng(15);
    for i in 0..INSTANCES {
        let d = r.random_range(1..=8);
        let n = r.random_range(1..=3);
        let (nq, ng) = (r.random_range(1..=6), r.random_range(1..=20));
        let q = embedding_set(&mut r, nq, d, n, 4, 3);
        let g = embedding_set(&mut r, ng, d, n, 4, 3);
        let binarize = i % 2 == 0;
        let got = distance_matrix(&q, &g, binarize).unwrap();
        let expect = Mat::from_shape_fn((q.len(), g.len()), |(a, b)| {
            let (qe, ge) = (&q.items[a].embedding, &g.items[b].embedding);
            oracle::pair_distance(
                &Side {
                    global: &qe.global,
                    parts: &qe.parts,
                    vis: &qe.visibility,
                },
                &Side {
                    global: &ge.global,
                    parts: &ge.parts,
                    vis: &ge.visibility,
                },
                binarize,
            )
        });
        assert!(max_abs(&got, &expect) < TOL);
    }
}

pub fn batch_hard_triplet_matches_loops() {
    let mut r = rng(16);
    let mut done = 0;
    while done < INSTANCES {
        let b = r.random_range(3..=12);
        let d = r.random_range(1..=8);
        let ys: Vec<usize> = (0..b).map(|_| r.random_range(0..4)).collect();
        let distinct = ys.iter().collect::<std::collections::BTreeSet<_>>().len();
        let has_pair = (0..b).any(|a| (0..b).any(|c| c != a && ys[a] == ys[c]));
        if distinct < 2 || !has_pair {
            continue;
        }
        let feats = uniform(&mut r, b, d);
        let margin = r.random_range(0.0..1.0);
        let got = triplet_loss(&feats, &ys, margin).unwrap();
        assert!((got - oracle::triplet(&feats, &ys, margin)).abs() < TOL);
        done += 1;
    }
}

pub fn cmc_map_matches_exhaustive_sort() {
    let mut r = rng(17);
    let mut done = 0;
    while done < INSTANCES {
        let nq = r.random_range(1..=8);
        let ng = r.random_range(1..=20);
        let n_ids = r.random_range(1..=5);
        // Coarse distances force ties.
        let levels = if done % 3 == 0 { 4.0 } else { 1e6 };
        let dist = Mat::from_shape_fn((nq, ng), |_| (r.random_range(0.0..1.0f64) * levels).floor() / levels);
        let qi: Vec<u32> = (0..nq).map(|_| r.random_range(0..n_ids)).collect();
        let gi: Vec<u32> = (0..ng).map(|_| r.random_range(0..n_ids)).collect();
        let qc: Vec<u32> = (0..nq).map(|_| r.random_range(1..=3)).collect();
        let gc: Vec<u32> = (0..ng).map(|_| r.random_range(1..=3)).collect();
        let expect = oracle::cmc_map(&dist, &qi, &gi, &qc, &gc);
        let got = cmc_map(&dist, &qi, &gi, &qc, &gc);
        match (expect, got) {
            (None, Err(_)) => {}
            (Some((ranks, map)), Ok(rep)) => {
                for (k, want) in RANKS.iter().zip(ranks) {
                    assert!((rep.rank_k[k] - want).abs() < TOL);
                }
                assert!((rep.map - map).abs() < TOL);
                done += 1;
            }
            (e, g) => panic!("oracle {e:?} vs library {g:?}"),
        }
    }
}
