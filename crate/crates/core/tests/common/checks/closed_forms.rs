//! Loss values with known closed forms.

use profd_core::alignment::{alignment_loss, PatchLabels, ScoreMap, TargetMode};
use profd_core::decoder::{attention_loss, diversity_loss};
use profd_core::memory::MemoryBank;
use profd_core::visibility::{focal_loss, VisTargets};
use profd_core::Mat;

const TOL: f64 = 1e-6;

/// Uniform scores against one-hot targets over five parts give `ln 5`.
pub fn alignment_uniform_vs_one_hot() {
    let (gh, gw, n) = (4, 2, 5);
    let labels = Mat::from_shape_fn((gh * gw, n), |(j, c)| if j % n == c { 1.0 } else { 0.0 });
    let p = PatchLabels::from_labels(gh, gw, labels);
    let s = ScoreMap {
        grid_h: gh,
        grid_w: gw,
        scores: Mat::zeros((gh * gw, n)),
    };
    for mode in [TargetMode::Soft, TargetMode::Hard] {
        let (l, empty) = alignment_loss(&s, &p, mode).unwrap();
        assert!(!empty);
        assert!((l - 5f64.ln()).abs() < TOL, "{mode:?}: {l}");
    }
}

/// Flat affinity against a flat target gives `ln HW`.
pub fn attention_uniform_uniform() {
    for (gh, gw) in [(4, 4), (8, 4), (3, 5)] {
        let hw = gh * gw;
        let p = PatchLabels::from_labels(gh, gw, Mat::from_elem((hw, 3), 0.4));
        let l = attention_loss(&Mat::zeros((3, hw)), &p).unwrap();
        assert!((l - (hw as f64).ln()).abs() < TOL, "HW {hw}: {l}");
    }
}

/// `α (1−v)^γ (−ln v)` at `v = ½, α = 0.65, γ = 2`.
pub fn focal_at_one_half() {
    let t = VisTargets { targets: vec![true] };
    let l = focal_loss(&[0.5], &t, 0.65, 2.0).unwrap();
    assert!((l - 0.112636).abs() < TOL, "{l}");
}

/// A single-identity bank leaves nothing to contrast against.
pub fn pcl_single_identity_is_zero() {
    let feats = Mat::from_shape_vec((2, 3), vec![0.3, -0.2, 0.9, 0.1, 0.5, 0.4]).unwrap();
    let bank = MemoryBank::from_features(&feats, &[0, 0], 1, 0.2, 0.05).unwrap();
    let l = bank.pcl_loss(0, feats.row(1)).unwrap();
    assert_eq!(l, 0.0);
}

/// Identical part features have every pairwise |cos| at 1.
pub fn diversity_identical_parts() {
    for n in 2..=6 {
        let parts = Mat::from_shape_fn((n, 4), |(_, k)| k as f64 - 1.5);
        let l = diversity_loss(&parts);
        assert!((l - 0.5).abs() < TOL, "N {n}: {l}");
    }
}
