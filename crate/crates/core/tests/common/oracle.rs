//! Brute-force reference implementations written with explicit loops over
//! plain indices. They share nothing with the library beyond the `Mat`
//! container.

use profd_core::Mat;

pub fn max_abs(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.dim(), b.dim(), "shape mismatch");
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `x W + b` for `x [r × i]`, `w [i × o]`.
pub fn linear(x: &Mat, w: &Mat, b: Option<&Mat>) -> Mat {
    let (r, i) = x.dim();
    let o = w.ncols();
    let mut out = Mat::zeros((r, o));
    for a in 0..r {
        for c in 0..o {
            let mut s = b.map_or(0.0, |b| b[[0, c]]);
            for k in 0..i {
                s += x[[a, k]] * w[[k, c]];
            }
            out[[a, c]] = s;
        }
    }
    out
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn layer_norm(x: &Mat, gamma: &Mat, beta: &Mat, eps: f64) -> Mat {
    let (r, c) = x.dim();
    let mut out = Mat::zeros((r, c));
    for a in 0..r {
        let mut mean = 0.0;
        for k in 0..c {
            mean += x[[a, k]];
        }
        mean /= c as f64;
        let mut var = 0.0;
        for k in 0..c {
            var += (x[[a, k]] - mean).powi(2);
        }
        var /= c as f64;
        for k in 0..c {
            out[[a, k]] = (x[[a, k]] - mean) / (var + eps).sqrt() * gamma[[0, k]] + beta[[0, k]];
        }
    }
    out
}

/// Projection weights of one attention layer, all `[d × d]` / `[1 × d]`.
pub struct MhaWeights {
    pub wq: Mat,
    pub bq: Mat,
    pub wk: Mat,
    pub bk: Mat,
    pub wv: Mat,
    pub bv: Mat,
    pub wo: Mat,
    pub bo: Mat,
    pub heads: usize,
}

/// Per-head `softmax(q_h k_hᵀ / √dh) v_h`, concatenated, then projected.
/// Returns the output and each head's weights.
pub fn mha(w: &MhaWeights, queries: &Mat, keys: &Mat) -> (Mat, Vec<Mat>) {
    let q = linear(queries, &w.wq, Some(&w.bq));
    let k = linear(keys, &w.wk, Some(&w.bk));
    let v = linear(keys, &w.wv, Some(&w.bv));
    let (nq, d) = q.dim();
    let nk = k.nrows();
    let dh = d / w.heads;
    let mut cat = Mat::zeros((nq, d));
    let mut maps = Vec::new();
    for h in 0..w.heads {
        let mut map = Mat::zeros((nq, nk));
        for i in 0..nq {
            let mut logits = vec![0.0; nk];
            for (j, l) in logits.iter_mut().enumerate() {
                for c in h * dh..(h + 1) * dh {
                    *l += q[[i, c]] * k[[j, c]];
                }
                *l /= (dh as f64).sqrt();
            }
            let p = softmax(&logits);
            for j in 0..nk {
                map[[i, j]] = p[j];
                for c in h * dh..(h + 1) * dh {
                    cat[[i, c]] += p[j] * v[[j, c]];
                }
            }
        }
        maps.push(map);
    }
    (linear(&cat, &w.wo, Some(&w.bo)), maps)
}

/// Spatial branch: prompts attend to `patches W_k` with values
/// `patches W_v`. Returns output and the head-averaged logits.
pub fn spatial(prompts: &Mat, patches: &Mat, wk: &Mat, wv: &Mat, heads: usize) -> (Mat, Mat) {
    let keys = linear(patches, wk, None);
    let vals = linear(patches, wv, None);
    let (n, d) = prompts.dim();
    let hw = patches.nrows();
    let dh = d / heads;
    let mut out = Mat::zeros((n, d));
    let mut aff = Mat::zeros((n, hw));
    for h in 0..heads {
        for i in 0..n {
            let mut logits = vec![0.0; hw];
            for (j, l) in logits.iter_mut().enumerate() {
                for c in h * dh..(h + 1) * dh {
                    *l += prompts[[i, c]] * keys[[j, c]];
                }
                *l /= (dh as f64).sqrt();
                aff[[i, j]] += *l / heads as f64;
            }
            let p = softmax(&logits);
            for j in 0..hw {
                for c in h * dh..(h + 1) * dh {
                    out[[i, c]] += p[j] * vals[[j, c]];
                }
            }
        }
    }
    (out, aff)
}

/// Rows of `weights [HW × N]` used as pooling weights over `patches [HW × d]`.
pub fn wap(patches: &Mat, weights: &Mat) -> Mat {
    let (hw, d) = patches.dim();
    let n = weights.ncols();
    let mut out = Mat::zeros((n, d));
    for c in 0..n {
        let mut total = 0.0;
        for j in 0..hw {
            total += weights[[j, c]];
        }
        if total <= 0.0 {
            continue;
        }
        for k in 0..d {
            let mut s = 0.0;
            for j in 0..hw {
                s += weights[[j, c]] * patches[[j, k]];
            }
            out[[c, k]] = s / total;
        }
    }
    out
}

pub fn cosine_dist(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if aa == 0.0 || bb == 0.0 {
        return 1.0;
    }
    1.0 - ab / (aa.sqrt() * bb.sqrt())
}

/// One query–gallery pair: global distance plus visibility-weighted parts.
pub struct Side<'a> {
    pub global: &'a [f64],
    pub parts: &'a Mat,
    pub vis: &'a [f64],
}

pub fn pair_distance(q: &Side<'_>, g: &Side<'_>, binarize: bool) -> f64 {
    let gate = |v: f64| if binarize { f64::from(u8::from(v >= 0.5)) } else { v };
    let mut num = cosine_dist(q.global, g.global);
    let mut den = 1.0;
    for i in 0..q.parts.nrows() {
        let qa: Vec<f64> = (0..q.parts.ncols()).map(|k| q.parts[[i, k]]).collect();
        let ga: Vec<f64> = (0..g.parts.ncols()).map(|k| g.parts[[i, k]]).collect();
        let w = gate(q.vis[i]) * gate(g.vis[i]);
        num += w * cosine_dist(&qa, &ga);
        den += w;
    }
    num / den
}

/// Batch-hard triplet loss with Euclidean distances between unit rows.
pub fn triplet(feats: &Mat, ys: &[usize], margin: f64) -> f64 {
    let (b, d) = feats.dim();
    let mut unit = feats.clone();
    for a in 0..b {
        let mut n = 0.0;
        for k in 0..d {
            n += feats[[a, k]] * feats[[a, k]];
        }
        let n = n.sqrt().max(1e-12);
        for k in 0..d {
            unit[[a, k]] /= n;
        }
    }
    let dist = |a: usize, c: usize| {
        let mut s = 0.0;
        for k in 0..d {
            s += (unit[[a, k]] - unit[[c, k]]).powi(2);
        }
        s.max(1e-12).sqrt()
    };
    let mut total = 0.0;
    let mut count = 0;
    for a in 0..b {
        let mut hp = f64::NEG_INFINITY;
        let mut hn = f64::INFINITY;
        for c in 0..b {
            if c == a {
                continue;
            }
            if ys[c] == ys[a] {
                hp = hp.max(dist(a, c));
            } else {
                hn = hn.min(dist(a, c));
            }
        }
        if hp.is_finite() && hn.is_finite() {
            total += (hp - hn + margin).max(0.0);
            count += 1;
        }
    }
    total / count as f64
}

/// Rank-1/5/10 and mAP over queries with at least one valid match.
/// Gallery entries sharing id and camera with the query are dropped.
pub fn cmc_map(dist: &Mat, qi: &[u32], gi: &[u32], qc: &[u32], gc: &[u32]) -> Option<([f64; 3], f64)> {
    let (nq, ng) = dist.dim();
    let mut hits = [0.0; 3];
    let mut ap_total = 0.0;
    let mut valid = 0.0;
    for q in 0..nq {
        let mut list: Vec<(f64, usize)> = Vec::new();
        for g in 0..ng {
            if !(gi[g] == qi[q] && gc[g] == qc[q]) {
                list.push((dist[[q, g]], g));
            }
        }
        // insertion sort on (distance, index)
        for i in 1..list.len() {
            let mut j = i;
            while j > 0 && (list[j].0 < list[j - 1].0 || (list[j].0 == list[j - 1].0 && list[j].1 < list[j - 1].1)) {
                list.swap(j, j - 1);
                j -= 1;
            }
        }
        let rel: Vec<bool> = list.iter().map(|&(_, g)| gi[g] == qi[q]).collect();
        let n_rel = rel.iter().filter(|r| **r).count();
        if n_rel == 0 {
            continue;
        }
        valid += 1.0;
        for (h, k) in hits.iter_mut().zip([1usize, 5, 10]) {
            if rel.iter().take(k).any(|r| *r) {
                *h += 1.0;
            }
        }
        let mut ap = 0.0;
        for k in 0..rel.len() {
            if rel[k] {
                let prec = rel[..=k].iter().filter(|r| **r).count() as f64 / (k + 1) as f64;
                ap += prec;
            }
        }
        ap_total += ap / n_rel as f64;
    }
    if valid == 0.0 {
        return None;
    }
    Some(([hits[0] / valid, hits[1] / valid, hits[2] / valid], ap_total / valid))
}
