//! Per-identity centroid banks with momentum updates and the prototypical
//! contrastive loss computed against them.
//!
//! Banks are stored `[C × width]`: one L2-normalised centroid per identity.
//! Within a training step they are constants; updates happen after the
//! backward pass.

use ndarray::{Array1, ArrayView1, Axis};

use crate::alignment::PatchLabels;
use crate::autograd::{Mat, Tape, Var};
use crate::error::{ProfdError, Result};

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub centroids: Mat,
    pub momentum: f64,
    pub temperature: f64,
}

fn normalize(mut v: Array1<f64>, what: impl FnOnce() -> String) -> Result<Array1<f64>> {
    let n = v.dot(&v).sqrt();
    if !(n > EPS) {
        return Err(ProfdError::Normalization(what()));
    }
    v /= n;
    Ok(v)
}

impl MemoryBank {
    /// Bank whose rows are the normalised per-identity means of `features`
    /// (`[M × width]`, row `k` labelled `ids[k]`).
    pub fn from_features(features: &Mat, ids: &[usize], n_ids: usize, momentum: f64, temperature: f64) -> Result<Self> {
        if features.nrows() != ids.len() {
            return Err(ProfdError::DimensionMismatch(format!(
                "{} features vs {} labels",
                features.nrows(),
                ids.len()
            )));
        }
        if !(temperature > 0.0) {
            return Err(ProfdError::InvalidInput(format!(
                "temperature {temperature} must be > 0"
            )));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(ProfdError::InvalidInput(format!("momentum {momentum} outside [0,1]")));
        }
        let width = features.ncols();
        let mut sums = Mat::zeros((n_ids, width));
        let mut counts = vec![0usize; n_ids];
        for (row, &id) in features.rows().into_iter().zip(ids) {
            if id >= n_ids {
                return Err(ProfdError::InvalidInput(format!("identity {id} outside [0,{n_ids})")));
            }
            let mut s = sums.row_mut(id);
            s += &row;
            counts[id] += 1;
        }
        let mut centroids = Mat::zeros((n_ids, width));
        for c in 0..n_ids {
            if counts[c] == 0 {
                return Err(ProfdError::InvalidInput(format!("identity {c} has no features")));
            }
            let mean = sums.row(c).to_owned() / counts[c] as f64;
            let unit = normalize(mean, || format!("mean feature of identity {c}"))?;
            centroids.row_mut(c).assign(&unit);
        }
        Ok(MemoryBank {
            centroids,
            momentum,
            temperature,
        })
    }

    pub fn n_ids(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn width(&self) -> usize {
        self.centroids.ncols()
    }

    /// `K[y] ← normalise(m·K[y] + (1−m)·feat)`; other rows are untouched.
    pub fn update(&mut self, y: usize, feat: ArrayView1<'_, f64>, m: f64) -> Result<()> {
        if y >= self.n_ids() {
            return Err(ProfdError::InvalidInput(format!(
                "identity {y} outside [0,{})",
                self.n_ids()
            )));
        }
        if feat.len() != self.width() {
            return Err(ProfdError::DimensionMismatch(format!(
                "feature width {} vs bank width {}",
                feat.len(),
                self.width()
            )));
        }
        if m == 1.0 {
            return Ok(());
        }
        let mixed = &self.centroids.row(y) * m + &feat * (1.0 - m);
        let unit = normalize(mixed, || format!("momentum update of identity {y}"))?;
        self.centroids.row_mut(y).assign(&unit);
        Ok(())
    }

    /// Momentum update with the bank's own momentum.
    pub fn update_default(&mut self, y: usize, feat: ArrayView1<'_, f64>) -> Result<()> {
        let m = self.momentum;
        self.update(y, feat, m)
    }

    /// Mean PCL loss of a batch of features `[B × width]` against this bank
    /// (treated as a constant snapshot).
    pub fn pcl_loss_var<'t>(&self, feats: Var<'t>, ys: &[usize]) -> Result<Var<'t>> {
        if !(self.temperature > 0.0) {
            return Err(ProfdError::InvalidInput(format!(
                "temperature {} must be > 0",
                self.temperature
            )));
        }
        let (b, w) = feats.shape();
        if w != self.width() || b != ys.len() {
            return Err(ProfdError::DimensionMismatch(format!(
                "features {:?} with {} labels vs bank width {}",
                feats.shape(),
                ys.len(),
                self.width()
            )));
        }
        let c = self.n_ids();
        if let Some(y) = ys.iter().find(|y| **y >= c) {
            return Err(ProfdError::InvalidInput(format!("identity {y} outside [0,{c})")));
        }
        let tape = feats.tape();
        let onehot = Mat::from_shape_fn((b, c), |(i, j)| if ys[i] == j { 1.0 } else { 0.0 });
        let bank_t = tape.constant(self.centroids.t().as_standard_layout().into_owned());
        Ok(feats
            .normalize_rows(EPS)
            .matmul(bank_t)
            .scale(1.0 / self.temperature)
            .log_softmax_rows()
            .mul(tape.constant(onehot))
            .sum_all()
            .scale(-1.0 / b as f64))
    }

    pub fn pcl_loss(&self, y: usize, feat: ArrayView1<'_, f64>) -> Result<f64> {
        let tape = Tape::new();
        let f = tape.constant(feat.to_owned().insert_axis(Axis(0)));
        Ok(self.pcl_loss_var(f, &[y])?.item())
    }
}

/// Weighted average pooling of patch features `[HW × d]` by one mask
/// channel; an empty channel yields the zero vector.
pub fn weighted_average_pool(patches: &Mat, weights: ArrayView1<'_, f64>) -> Array1<f64> {
    let total = weights.sum();
    if total <= 0.0 {
        return Array1::zeros(patches.ncols());
    }
    weights.dot(patches) / total
}

/// Tape form of [`weighted_average_pool`] for every part at once: `[N × d]`.
pub fn weighted_average_pool_var<'t>(patches: Var<'t>, labels: &PatchLabels) -> Var<'t> {
    let lt = labels.labels.t();
    let weights = Mat::from_shape_fn(lt.dim(), |(n, k)| {
        let total: f64 = lt.row(n).sum();
        if total > 0.0 {
            lt[[n, k]] / total
        } else {
            0.0
        }
    });
    patches.tape().constant(weights).matmul(patches)
}

/// Concatenation `[WAP(F, M_p^1); …; WAP(F, M_p^N)]`.
pub fn wap_concat(patches: &Mat, labels: &PatchLabels) -> Array1<f64> {
    let n = labels.n_parts();
    let d = patches.ncols();
    let mut out = Array1::zeros(n * d);
    for c in 0..n {
        let pooled = weighted_average_pool(patches, labels.labels.column(c));
        out.slice_mut(ndarray::s![c * d..(c + 1) * d]).assign(&pooled);
    }
    out
}

/// Local bank: per-identity normalised mean of the WAP concatenations.
pub fn init_local_bank(
    items: &[(&Mat, &PatchLabels, usize)],
    n_ids: usize,
    momentum: f64,
    temperature: f64,
) -> Result<MemoryBank> {
    if items.is_empty() {
        return Err(ProfdError::InvalidInput(
            "no images to initialise the local bank".into(),
        ));
    }
    let width = items[0].0.ncols() * items[0].1.n_parts();
    let mut feats = Mat::zeros((items.len(), width));
    let mut ids = Vec::with_capacity(items.len());
    for (k, (patches, labels, id)) in items.iter().enumerate() {
        feats.row_mut(k).assign(&wap_concat(patches, labels));
        ids.push(*id);
    }
    MemoryBank::from_features(&feats, &ids, n_ids, momentum, temperature)
}
