//! Part visibility: per-part binary classifiers, their focal loss, and the
//! visibility-gated query/gallery distance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape, Var};
use crate::error::{ProfdError, Result};
use crate::mask::PartMask;
use crate::params::{gaussian, Bound, ParamId, ParamStore};

pub const FOCAL_CLAMP: f64 = 1e-7;

/// `N` independent `d → 1` logistic classifiers; classifier `i` reads only part `i`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VisibilityHead {
    /// `[N × d]`, row `i` is classifier `i`'s weight.
    pub w: ParamId,
    /// `[1 × N]`.
    pub b: ParamId,
}

impl VisibilityHead {
    pub fn new(store: &mut ParamStore, n_parts: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0f15_0000);
        VisibilityHead {
            w: store.add("visibility.w", gaussian(&mut rng, n_parts, d, 0.02)),
            b: store.add("visibility.b", Mat::zeros((1, n_parts))),
        }
    }

    /// Visibility scores `[1 × N]` in `(0, 1)`.
    pub fn forward<'t>(&self, p: &Bound<'t>, parts: Var<'t>) -> Result<Var<'t>> {
        let w = p[self.w];
        if parts.shape() != w.shape() {
            return Err(ProfdError::DimensionMismatch(format!(
                "part features {:?} vs visibility weights {:?}",
                parts.shape(),
                w.shape()
            )));
        }
        Ok(parts.mul(w).sum_rows().t().add(p[self.b]).sigmoid())
    }
}

pub fn predict_visibility(store: &ParamStore, head: &VisibilityHead, parts: &Mat) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    Ok(head
        .forward(&p, tape.constant(parts.clone()))?
        .value()
        .iter()
        .cloned()
        .collect())
}

/// Ground-truth visibility: part `i` is visible when any pixel of its
/// channel exceeds `threshold`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisTargets {
    pub targets: Vec<bool>,
}

pub fn visibility_targets(mask: &PartMask, threshold: f32) -> VisTargets {
    VisTargets {
        targets: (0..mask.n).map(|c| mask.channel_max(c) > threshold).collect(),
    }
}

/// Mean over parts of the binary focal loss.
pub fn focal_loss_var<'t>(v: Var<'t>, targets: &VisTargets, alpha: f64, gamma: f64) -> Result<Var<'t>> {
    let n = targets.targets.len();
    if v.shape() != (1, n) {
        return Err(ProfdError::DimensionMismatch(format!(
            "visibility {:?} vs {n} targets",
            v.shape()
        )));
    }
    let tape = v.tape();
    let pos = Mat::from_shape_fn((1, n), |(_, i)| if targets.targets[i] { -alpha } else { 0.0 });
    let neg = Mat::from_shape_fn((1, n), |(_, i)| if targets.targets[i] { 0.0 } else { alpha - 1.0 });
    let v = v.clamp(FOCAL_CLAMP, 1.0 - FOCAL_CLAMP);
    let one_minus = v.neg().add_scalar(1.0);
    let pos_term = one_minus.powf(gamma).mul(v.ln()).mul(tape.constant(pos));
    let neg_term = v.powf(gamma).mul(one_minus.ln()).mul(tape.constant(neg));
    Ok(pos_term.add(neg_term).sum_all().scale(1.0 / n as f64))
}

pub fn focal_loss(v: &[f64], targets: &VisTargets, alpha: f64, gamma: f64) -> Result<f64> {
    let tape = Tape::new();
    let var = tape.constant(Mat::from_shape_vec((1, v.len()), v.to_vec()).expect("row"));
    Ok(focal_loss_var(var, targets, alpha, gamma)?.item())
}

/// Everything retrieval needs about one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// `[d]`
    pub global: Vec<f64>,
    /// `[N × d]`
    pub parts: Mat,
    /// `[N]`, raw classifier scores.
    pub visibility: Vec<f64>,
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot / (na * nb)
}

pub const VISIBILITY_THRESHOLD: f64 = 0.5;

fn gate(v: f64, binarize: bool) -> f64 {
    if binarize {
        if v >= VISIBILITY_THRESHOLD {
            1.0
        } else {
            0.0
        }
    } else {
        v
    }
}

/// Visibility-weighted mean of the part cosine distances and the global one
/// (whose weight is fixed at 1).
pub fn pairwise_distance(q: &Embedding, g: &Embedding, binarize: bool) -> Result<f64> {
    if q.parts.dim() != g.parts.dim() || q.global.len() != g.global.len() {
        return Err(ProfdError::DimensionMismatch(format!(
            "query parts {:?}/global {} vs gallery parts {:?}/global {}",
            q.parts.dim(),
            q.global.len(),
            g.parts.dim(),
            g.global.len()
        )));
    }
    let part_d: Vec<f64> = (0..q.parts.nrows())
        .map(|i| {
            cosine_distance(
                q.parts.row(i).as_slice().expect("row-major"),
                g.parts.row(i).as_slice().expect("row-major"),
            )
        })
        .collect();
    let d_g = cosine_distance(&q.global, &g.global);
    Ok(combine_distances(&part_d, d_g, &q.visibility, &g.visibility, binarize))
}

/// `(Σ_i v_i^q v_i^g d_i + d_g) / (Σ_i v_i^q v_i^g + 1)`.
pub fn combine_distances(part_d: &[f64], d_g: f64, vq: &[f64], vg: &[f64], binarize: bool) -> f64 {
    let mut num = d_g;
    let mut den = 1.0;
    for ((d, a), b) in part_d.iter().zip(vq).zip(vg) {
        let w = gate(*a, binarize) * gate(*b, binarize);
        if w != 0.0 {
            num += w * d;
            den += w;
        }
    }
    num / den
}
