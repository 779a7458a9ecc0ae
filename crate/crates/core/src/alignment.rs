//! Prompt-to-patch presence scores and the auxiliary segmentation loss
//! that gives prompts spatial awareness.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape, Var};
use crate::dims::Dims;
use crate::encoder::FeatureMap;
use crate::error::{ProfdError, Result};
use crate::mask::PartMask;

/// `[grid_h·grid_w × N]` inner products between patches and prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub scores: Mat,
}

/// Patch-pooled part masks, `[grid_h·grid_w × N]`, plus a per-patch flag
/// marking patches that carry any part mass.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchLabels {
    pub grid_h: usize,
    pub grid_w: usize,
    pub labels: Mat,
    pub valid: Vec<bool>,
}

impl PatchLabels {
    pub fn from_labels(grid_h: usize, grid_w: usize, labels: Mat) -> Self {
        let valid = labels
            .rows()
            .into_iter()
            .map(|r| r.iter().cloned().fold(0.0, f64::max) > 0.0)
            .collect();
        PatchLabels {
            grid_h,
            grid_w,
            labels,
            valid,
        }
    }

    pub fn n_parts(&self) -> usize {
        self.labels.ncols()
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// Pooled fractions renormalised over parts.
    #[default]
    Soft,
    /// One-hot on the arg-max part.
    Hard,
}

pub fn score_map(f: &FeatureMap, prompts: &Mat) -> Result<ScoreMap> {
    if f.width() != prompts.ncols() {
        return Err(ProfdError::DimensionMismatch(format!(
            "feature width {} vs prompt width {}",
            f.width(),
            prompts.ncols()
        )));
    }
    Ok(ScoreMap {
        grid_h: f.grid_h,
        grid_w: f.grid_w,
        scores: f.patches.dot(&prompts.t()),
    })
}

/// Tape form of [`score_map`]: `patches [HW × d] · promptsᵀ`.
pub fn score_map_var<'t>(patches: Var<'t>, prompts: Var<'t>) -> Var<'t> {
    patches.matmul(prompts.t())
}

/// Average-pools a mask onto the patch grid with kernel `patch` and the
/// tokeniser's stride. Masks at another resolution are first resized
/// bilinearly to the image size.
pub fn pool_mask(mask: &PartMask, dims: &Dims) -> Result<PatchLabels> {
    dims.validate()?;
    let resized;
    let m = if mask.h != dims.img_h || mask.w != dims.img_w {
        resized = mask.resize_bilinear(dims.img_h, dims.img_w);
        &resized
    } else {
        mask
    };
    let (gh, gw, p, n) = (dims.grid_h(), dims.grid_w(), dims.patch, m.n);
    let area = (p * p) as f64;
    let mut labels = Mat::zeros((gh * gw, n));
    for i in 0..gh {
        for j in 0..gw {
            let (y0, x0) = dims.patch_origin(i, j);
            let mut acc = vec![0.0f64; n];
            for y in y0..y0 + p {
                let base = (y * m.w + x0) * n;
                for (k, v) in m.data[base..base + p * n].iter().enumerate() {
                    acc[k % n] += *v as f64;
                }
            }
            for (c, a) in acc.into_iter().enumerate() {
                labels[[i * gw + j, c]] = a / area;
            }
        }
    }
    Ok(PatchLabels::from_labels(gh, gw, labels))
}

/// Per-patch target distributions over parts; invalid patches are zero rows.
pub fn alignment_targets(p: &PatchLabels, mode: TargetMode) -> Mat {
    let mut t = p.labels.clone();
    for (mut row, valid) in t.rows_mut().into_iter().zip(&p.valid) {
        if !*valid {
            row.fill(0.0);
            continue;
        }
        match mode {
            TargetMode::Soft => {
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            TargetMode::Hard => {
                let arg = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (k, v)| if *v > b.1 { (k, *v) } else { b })
                    .0;
                row.fill(0.0);
                row[arg] = 1.0;
            }
        }
    }
    t
}

/// Alignment loss on the tape together with the empty-target flag.
pub struct AlignLoss<'t> {
    pub loss: Var<'t>,
    pub n_valid: usize,
    /// Set when no patch had part mass; the loss is then exactly 0.
    pub no_valid: bool,
}

/// Mean over valid patches of the cross-entropy between `softmax_N(S)` and
/// the per-patch target distribution.
pub fn alignment_loss_var<'t>(scores: Var<'t>, p: &PatchLabels, mode: TargetMode) -> Result<AlignLoss<'t>> {
    let tape = scores.tape();
    if scores.shape() != p.labels.dim() {
        return Err(ProfdError::DimensionMismatch(format!(
            "score map {:?} vs patch labels {:?}",
            scores.shape(),
            p.labels.dim()
        )));
    }
    let n_valid = p.n_valid();
    if n_valid == 0 {
        warn!("alignment loss: no patch carries part mass, returning 0");
        return Ok(AlignLoss {
            loss: scores.mul(tape.constant(Mat::zeros(p.labels.dim()))).sum_all(),
            n_valid,
            no_valid: true,
        });
    }
    let targets = tape.constant(alignment_targets(p, mode));
    let loss = scores
        .log_softmax_rows()
        .mul(targets)
        .sum_all()
        .scale(-1.0 / n_valid as f64);
    Ok(AlignLoss {
        loss,
        n_valid,
        no_valid: false,
    })
}

/// Plain evaluation of [`alignment_loss_var`]. Returns `(loss, no_valid)`.
pub fn alignment_loss(s: &ScoreMap, p: &PatchLabels, mode: TargetMode) -> Result<(f64, bool)> {
    let tape = Tape::new();
    let out = alignment_loss_var(tape.constant(s.scores.clone()), p, mode)?;
    Ok((out.loss.item(), out.no_valid))
}
