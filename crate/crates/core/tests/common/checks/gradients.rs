//! Autodiff against central finite differences.

use rand::Rng;

use crate::common::fd::{grad_check, numeric_grad, rel_err};
use crate::common::fixtures::{band_mask, image, labels, rng, tiny_model_config, uniform, unit_rows};
use profd_core::alignment::{alignment_loss_var, PatchLabels, TargetMode};
use profd_core::decoder::{
    attention_loss_tempered_var, attention_loss_var, diversity_loss_var, DecoderConfig, HybridDecoder,
};
use profd_core::encoder::Image;
use profd_core::memory::MemoryBank;
use profd_core::model::ProfdModel;
use profd_core::params::{Bound, Dropout, ParamId, ParamStore};
use profd_core::visibility::{focal_loss_var, VisTargets};
use profd_core::{Mat, Tape, Var};

const TOL: f64 = 1e-3;

pub fn alignment_loss_gradient() {
    let mut r = rng(21);
    for mode in [TargetMode::Soft, TargetMode::Hard] {
        for _ in 0..5 {
            let lab = labels(&mut r, 3, 2, 3);
            let patches = uniform(&mut r, 6, 4);
            let prompts = uniform(&mut r, 3, 4);
            // through the score map, w.r.t. the patch features
            let pr = prompts.clone();
            let err = grad_check(&patches, |x| {
                let p = x.tape().constant(pr.clone());
                alignment_loss_var(x.matmul(p.t()), &lab, mode).unwrap().loss
            });
            assert!(err < TOL, "{mode:?} patches: {err}");
            let pa = patches.clone();
            let err = grad_check(&prompts, |x| {
                let f = x.tape().constant(pa.clone());
                alignment_loss_var(f.matmul(x.t()), &lab, mode).unwrap().loss
            });
            assert!(err < TOL, "{mode:?} prompts: {err}");
        }
    }
}

pub fn attention_loss_gradient() {
    let mut r = rng(22);
    for _ in 0..5 {
        let lab = labels(&mut r, 4, 4, 3);
        let aff = uniform(&mut r, 3, 16).mapv(|v| 3.0 * v);
        assert!(grad_check(&aff, |x| attention_loss_var(x, &lab).unwrap()) < TOL);
        assert!(grad_check(&aff, |x| attention_loss_tempered_var(x, &lab, 0.1).unwrap()) < TOL);
    }
}

pub fn diversity_loss_gradient() {
    let mut r = rng(23);
    for n in 2..=5 {
        let parts = uniform(&mut r, n, 4);
        assert!(grad_check(&parts, |x| diversity_loss_var(x).loss) < TOL);
    }
}

pub fn focal_loss_gradient() {
    let mut r = rng(24);
    for _ in 0..5 {
        let v = Mat::from_shape_fn((1, 5), |_| r.random_range(0.05..0.95));
        let targets = VisTargets {
            targets: (0..5).map(|_| r.random_bool(0.5)).collect(),
        };
        for gamma in [0.0, 1.0, 2.0] {
            let err = grad_check(&v, |x| focal_loss_var(x, &targets, 0.65, gamma).unwrap());
            assert!(err < TOL, "gamma {gamma}: {err}");
        }
    }
}

pub fn pcl_loss_gradient() {
    let mut r = rng(25);
    for _ in 0..5 {
        let ids: Vec<usize> = (0..12).map(|k| k % 4).collect();
        let bank = MemoryBank::from_features(&unit_rows(&mut r, 12, 6), &ids, 4, 0.2, 0.05).unwrap();
        let feats = uniform(&mut r, 3, 6);
        let ys = [0, 2, 3];
        assert!(grad_check(&feats, |x| bank.pcl_loss_var(x, &ys).unwrap()) < TOL);
    }
}

fn objective<'t>(
    m: &ProfdModel,
    tape: &'t Tape,
    b: &Bound<'t>,
    img: &Image,
    lab: &PatchLabels,
    probe: &Mat,
) -> Var<'t> {
    let (_, outs) = m
        .forward(tape, b, &[img], &[Some(lab.clone())], &mut Dropout::eval())
        .unwrap();
    let o = &outs[0];
    o.parts
        .mul(tape.constant(probe.clone()))
        .sum_all()
        .add(attention_loss_var(o.affinities[0], lab).unwrap())
        .add(diversity_loss_var(o.parts).loss)
}

/// Parts, attention loss and diversity of a two-block decoder on one
/// image, checked for every trainable tensor including the prompt prefix.
pub fn decoder_end_to_end_gradient() {
    let mut r = rng(26);
    let cfg = tiny_model_config();
    let dims = cfg.dims;
    let mut model = ProfdModel::new(cfg).unwrap();
    let img = image(&mut r, dims.img_h, dims.img_w);
    let lab = model
        .patch_labels(&band_mask(&mut r, dims.img_h, dims.img_w, dims.n_parts))
        .unwrap();
    let probe = uniform(&mut r, dims.n_parts, dims.d);

    let analytic: Vec<(ParamId, String, Mat)> = {
        let tape = Tape::new();
        let b = model.store.bind(&tape);
        let grads = objective(&model, &tape, &b, &img, &lab, &probe).backward();
        model
            .store
            .iter()
            .map(|(id, name, _)| (id, name.to_string(), grads.get_or_zeros(b[id])))
            .collect()
    };

    let mut checked_prefix = false;
    for (id, name, a) in analytic {
        if name.starts_with("classifier") || name.starts_with("visibility") {
            assert!(a.iter().all(|v| *v == 0.0), "{name} should not receive gradient");
            continue;
        }
        let x = model.store.get(id).clone();
        let n = numeric_grad(&x, |v| {
            *model.store.get_mut(id) = v.clone();
            let tape = Tape::new();
            let b = model.store.bind_frozen(&tape);
            objective(&model, &tape, &b, &img, &lab, &probe).item()
        });
        *model.store.get_mut(id) = x;
        let err = rel_err(&a, &n);
        assert!(err < TOL, "{name}: relative error {err}");
        if name == "prompt.prefix" {
            assert!(a.iter().any(|v| v.abs() > 1e-10), "prefix gradient vanished");
            checked_prefix = true;
        }
    }
    assert!(checked_prefix, "prompt prefix missing from the store");
}

/// `L_attn + mean(F_p)` through a full decoder at d = 4, N = 2, HW = 3,
/// w.r.t. the spatial key projection and the prompt embeddings.
pub fn decoder_small_instance_gradient() {
    let mut r = rng(27);
    let mut store = ParamStore::new();
    let cfg = DecoderConfig {
        layers: 1,
        heads: 2,
        ffn_mult: 2,
        dropout: 0.0,
        ..DecoderConfig::default()
    };
    let dec = HybridDecoder::new(&mut store, cfg, 4, 5).unwrap();
    let wk = dec.blocks[0].spa.wk;
    let prompts = uniform(&mut r, 2, 4);
    let patches = uniform(&mut r, 3, 4);
    let lab = PatchLabels::from_labels(
        3,
        1,
        Mat::from_shape_vec((3, 2), vec![1.0, 0.0, 0.5, 0.5, 0.0, 1.0]).unwrap(),
    );

    fn loss<'t>(dec: &HybridDecoder, b: &Bound<'t>, pro: Var<'t>, pat: Var<'t>, lab: &PatchLabels) -> Var<'t> {
        let out = dec.decode(b, pro, pat, &mut Dropout::eval()).unwrap();
        attention_loss_var(out.affinities[0], lab)
            .unwrap()
            .add(out.parts.mean_all())
    }

    // w.r.t. the prompt embeddings
    let err = grad_check(&prompts, |x| {
        let b = store.bind_frozen(x.tape());
        loss(&dec, &b, x, x.tape().constant(patches.clone()), &lab)
    });
    assert!(err < TOL, "E_pro: {err}");

    // w.r.t. W_k
    let analytic = {
        let tape = Tape::new();
        let b = store.bind(&tape);
        let l = loss(
            &dec,
            &b,
            tape.constant(prompts.clone()),
            tape.constant(patches.clone()),
            &lab,
        );
        l.backward().get_or_zeros(b[wk])
    };
    let x = store.get(wk).clone();
    let numeric = numeric_grad(&x, |v| {
        *store.get_mut(wk) = v.clone();
        let tape = Tape::new();
        let b = store.bind_frozen(&tape);
        loss(
            &dec,
            &b,
            tape.constant(prompts.clone()),
            tape.constant(patches.clone()),
            &lab,
        )
        .item()
    });
    let err = rel_err(&analytic, &numeric);
    assert!(err < TOL, "W_k: {err}");
    assert!(analytic.iter().any(|v| v.abs() > 1e-8), "W_k gradient vanished");
}
