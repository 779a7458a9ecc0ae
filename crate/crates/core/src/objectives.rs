//! Identity cross-entropy, batch-hard triplet loss and the weighted sum of
//! all training terms.

use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape, Var};
use crate::error::{ProfdError, Result};

const DIST_FLOOR: f64 = 1e-12;

/// Mean cross-entropy with label smoothing `eps`.
pub fn id_loss_var<'t>(logits: Var<'t>, ys: &[usize], eps: f64) -> Result<Var<'t>> {
    let (b, c) = logits.shape();
    if b != ys.len() {
        return Err(ProfdError::DimensionMismatch(format!(
            "{b} logit rows vs {} labels",
            ys.len()
        )));
    }
    if let Some(y) = ys.iter().find(|y| **y >= c) {
        return Err(ProfdError::InvalidInput(format!("label {y} outside [0,{c})")));
    }
    let off = eps / c as f64;
    let target = Mat::from_shape_fn((b, c), |(i, j)| if ys[i] == j { 1.0 - eps + off } else { off });
    Ok(logits
        .log_softmax_rows()
        .mul(logits.tape().constant(target))
        .sum_all()
        .scale(-1.0 / b as f64))
}

pub fn id_loss(logits: &Mat, ys: &[usize], eps: f64) -> Result<f64> {
    let tape = Tape::new();
    Ok(id_loss_var(tape.constant(logits.clone()), ys, eps)?.item())
}

/// Euclidean distance matrix between L2-normalised rows, floored at
/// `sqrt(DIST_FLOOR)` so the square root stays differentiable.
pub fn normalized_distances(feats: Var<'_>) -> Var<'_> {
    let x = feats.normalize_rows(DIST_FLOOR);
    let gram = x.matmul(x.t());
    let sq = x.mul(x).sum_rows();
    let (b, _) = feats.shape();
    let tape = feats.tape();
    let ones = tape.constant(Mat::ones((1, b)));
    let sq_rows = sq.matmul(ones);
    sq_rows
        .add(sq_rows.t())
        .sub(gram.scale(2.0))
        .clamp(DIST_FLOOR, f64::INFINITY)
        .sqrt()
}

/// Batch-hard triplet loss: per anchor, hinge of the hardest positive
/// distance minus the hardest negative distance plus `margin`, averaged
/// over anchors that have at least one positive.
pub fn triplet_loss_var<'t>(feats: Var<'t>, ys: &[usize], margin: f64) -> Result<Var<'t>> {
    let (b, _) = feats.shape();
    if b != ys.len() {
        return Err(ProfdError::DimensionMismatch(format!(
            "{b} features vs {} labels",
            ys.len()
        )));
    }
    let distinct: std::collections::BTreeSet<_> = ys.iter().collect();
    if distinct.len() < 2 {
        return Err(ProfdError::InvalidInput(
            "triplet loss needs at least two identities".into(),
        ));
    }
    let dist = normalized_distances(feats);
    let dv = dist.value();
    let mut pos_sel = Mat::zeros((b, b));
    let mut neg_sel = Mat::zeros((b, b));
    let mut anchors = Mat::zeros((b, 1));
    let mut n_anchors = 0usize;
    for a in 0..b {
        let mut hp: Option<usize> = None;
        let mut hn: Option<usize> = None;
        for j in 0..b {
            if j == a {
                continue;
            }
            if ys[j] == ys[a] {
                if hp.is_none_or(|p| dv[[a, j]] > dv[[a, p]]) {
                    hp = Some(j);
                }
            } else if hn.is_none_or(|n| dv[[a, j]] < dv[[a, n]]) {
                hn = Some(j);
            }
        }
        if let (Some(p), Some(n)) = (hp, hn) {
            pos_sel[[a, p]] = 1.0;
            neg_sel[[a, n]] = 1.0;
            anchors[[a, 0]] = 1.0;
            n_anchors += 1;
        }
    }
    if n_anchors == 0 {
        return Err(ProfdError::InvalidInput(
            "no identity has two samples in the batch".into(),
        ));
    }
    let tape = feats.tape();
    let d_ap = dist.mul(tape.constant(pos_sel)).sum_rows();
    let d_an = dist.mul(tape.constant(neg_sel)).sum_rows();
    Ok(d_ap
        .sub(d_an)
        .add_scalar(margin)
        .relu()
        .mul(tape.constant(anchors))
        .sum_all()
        .scale(1.0 / n_anchors as f64))
}

pub fn triplet_loss(feats: &Mat, ys: &[usize], margin: f64) -> Result<f64> {
    let tape = Tape::new();
    Ok(triplet_loss_var(tape.constant(feats.clone()), ys, margin)?.item())
}

/// The ten training terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    IdG,
    TriG,
    IdC,
    TriC,
    Div,
    PclP,
    PclG,
    Align,
    Attn,
    Vis,
}

impl LossTerm {
    pub const ALL: [LossTerm; 10] = [
        LossTerm::IdG,
        LossTerm::TriG,
        LossTerm::IdC,
        LossTerm::TriC,
        LossTerm::Div,
        LossTerm::PclP,
        LossTerm::PclG,
        LossTerm::Align,
        LossTerm::Attn,
        LossTerm::Vis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::IdG => "id_g",
            LossTerm::TriG => "tri_g",
            LossTerm::IdC => "id_c",
            LossTerm::TriC => "tri_c",
            LossTerm::Div => "div",
            LossTerm::PclP => "pcl_p",
            LossTerm::PclG => "pcl_g",
            LossTerm::Align => "align",
            LossTerm::Attn => "attn",
            LossTerm::Vis => "vis",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub id_g: f64,
    pub tri_g: f64,
    pub id_c: f64,
    pub tri_c: f64,
    pub div: f64,
    pub pcl_p: f64,
    pub pcl_g: f64,
    pub align: f64,
    pub attn: f64,
    pub vis: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            id_g: 1.0,
            tri_g: 1.0,
            id_c: 1.0,
            tri_c: 1.0,
            div: 1.0,
            pcl_p: 1.0,
            pcl_g: 1.0,
            align: 1.0,
            attn: 1.0,
            vis: 1.0,
        }
    }
}

impl LossWeights {
    pub fn get(&self, t: LossTerm) -> f64 {
        match t {
            LossTerm::IdG => self.id_g,
            LossTerm::TriG => self.tri_g,
            LossTerm::IdC => self.id_c,
            LossTerm::TriC => self.tri_c,
            LossTerm::Div => self.div,
            LossTerm::PclP => self.pcl_p,
            LossTerm::PclG => self.pcl_g,
            LossTerm::Align => self.align,
            LossTerm::Attn => self.attn,
            LossTerm::Vis => self.vis,
        }
    }

    pub fn set(&mut self, t: LossTerm, w: f64) {
        match t {
            LossTerm::IdG => self.id_g = w,
            LossTerm::TriG => self.tri_g = w,
            LossTerm::IdC => self.id_c = w,
            LossTerm::TriC => self.tri_c = w,
            LossTerm::Div => self.div = w,
            LossTerm::PclP => self.pcl_p = w,
            LossTerm::PclG => self.pcl_g = w,
            LossTerm::Align => self.align = w,
            LossTerm::Attn => self.attn = w,
            LossTerm::Vis => self.vis = w,
        }
    }
}

/// Per-term values (absent terms are 0), the weights used and the total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub id_g: f64,
    pub tri_g: f64,
    pub id_c: f64,
    pub tri_c: f64,
    pub div: f64,
    pub pcl_p: f64,
    pub pcl_g: f64,
    pub align: f64,
    pub attn: f64,
    pub vis: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossReport {
    pub fn term(&self, t: LossTerm) -> f64 {
        match t {
            LossTerm::IdG => self.id_g,
            LossTerm::TriG => self.tri_g,
            LossTerm::IdC => self.id_c,
            LossTerm::TriC => self.tri_c,
            LossTerm::Div => self.div,
            LossTerm::PclP => self.pcl_p,
            LossTerm::PclG => self.pcl_g,
            LossTerm::Align => self.align,
            LossTerm::Attn => self.attn,
            LossTerm::Vis => self.vis,
        }
    }

    pub fn set_term(&mut self, t: LossTerm, v: f64) {
        match t {
            LossTerm::IdG => self.id_g = v,
            LossTerm::TriG => self.tri_g = v,
            LossTerm::IdC => self.id_c = v,
            LossTerm::TriC => self.tri_c = v,
            LossTerm::Div => self.div = v,
            LossTerm::PclP => self.pcl_p = v,
            LossTerm::PclG => self.pcl_g = v,
            LossTerm::Align => self.align = v,
            LossTerm::Attn => self.attn = v,
            LossTerm::Vis => self.vis = v,
        }
    }
}

/// Weighted sum of the supplied terms. A non-finite term aborts with its name.
pub fn total_loss<'t>(
    tape: &'t Tape,
    terms: &[(LossTerm, Var<'t>)],
    weights: &LossWeights,
) -> Result<(Var<'t>, LossReport)> {
    let mut report = LossReport {
        id_g: 0.0,
        tri_g: 0.0,
        id_c: 0.0,
        tri_c: 0.0,
        div: 0.0,
        pcl_p: 0.0,
        pcl_g: 0.0,
        align: 0.0,
        attn: 0.0,
        vis: 0.0,
        total: 0.0,
        weights: *weights,
    };
    let mut total = tape.scalar(0.0);
    for (term, var) in terms {
        let v = var.item();
        if !v.is_finite() {
            return Err(ProfdError::NonFiniteLoss {
                term: term.name().to_string(),
                value: v,
            });
        }
        report.set_term(*term, v);
        total = total.add(var.scale(weights.get(*term)));
    }
    report.total = total.item();
    Ok((total, report))
}

/// [`total_loss`] on plain numbers.
pub fn total_from_values(values: &[(LossTerm, f64)], weights: &LossWeights) -> Result<LossReport> {
    let tape = Tape::new();
    let vars: Vec<_> = values.iter().map(|(t, v)| (*t, tape.scalar(*v))).collect();
    Ok(total_loss(&tape, &vars, weights)?.1)
}
