//! The training loop and evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::alignment::{alignment_loss_var, score_map_var, PatchLabels};
use crate::autograd::{Mat, Tape, Var};
use crate::data::{augment, pk_batches, Dataset, Sample, MASK_THRESHOLD};
use crate::decoder::{attention_loss_tempered_var, diversity_loss_var};
use crate::encoder::Image;
use crate::error::{ProfdError, Result};
use crate::mask::PartMask;
use crate::memory::{wap_concat, MemoryBank};
use crate::model::ProfdModel;
use crate::objectives::{id_loss_var, total_loss, triplet_loss_var, LossReport, LossTerm};
use crate::optim::Adam;
use crate::params::Dropout;
use crate::retrieval::{evaluate_sets, EmbeddingSet, MetricsReport};
use crate::visibility::{focal_loss_var, visibility_targets, VISIBILITY_THRESHOLD};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    #[serde(flatten)]
    pub report: LossReport,
}

/// Everything a checkpoint holds.
pub struct TrainState {
    pub config: TrainConfig,
    pub model: ProfdModel,
    pub adam: Adam,
    pub bank_g: MemoryBank,
    pub bank_p: MemoryBank,
    /// Dataset identity of each class label.
    pub train_ids: Vec<u32>,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
}

pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn check_dataset(cfg: &TrainConfig, ds: &Dataset) -> Result<()> {
    if ds.train.is_empty() {
        return Err(ProfdError::InvalidInput("training split is empty".into()));
    }
    if cfg.needs_masks() && !ds.train.iter().all(Sample::has_mask) {
        return Err(ProfdError::Config(
            "alignment, attention and visibility terms (and mask pooling) need part masks; \
             the training split has images without one"
                .into(),
        ));
    }
    let n = cfg.prompt.parts.len();
    if let Some(s) = ds.train.iter().find(|s| s.mask.as_ref().is_some_and(|m| m.n != n)) {
        return Err(ProfdError::Config(format!(
            "mask of {} has {} channels, {} parts configured",
            s.name,
            s.mask.as_ref().map_or(0, |m| m.n),
            n
        )));
    }
    Ok(())
}

impl TrainState {
    /// Fresh model, optimizer and memory banks for `ds`.
    pub fn init(config: TrainConfig, ds: &Dataset) -> Result<Self> {
        config.validate()?;
        check_dataset(&config, ds)?;
        let train_ids = ds.train_ids();
        let model = ProfdModel::new(config.model_config(train_ids.len()))?;
        let adam = Adam::new(config.optimizer, model.store.len());
        let (bank_g, bank_p) = init_banks(&config, &model, ds)?;
        Ok(TrainState {
            config,
            model,
            adam,
            bank_g,
            bank_p,
            train_ids,
            epoch: 0,
            step: 0,
        })
    }

    /// Runs one epoch of PK batches; `log` sees every step.
    pub fn train_epoch(&mut self, ds: &Dataset, log: &mut dyn FnMut(&StepRecord)) -> Result<()> {
        let labels = ds.train_labels();
        let lr = self.config.lr_schedule().lr(self.epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.config.seed, 0xe90c_0000 + self.epoch as u64));
        let batches = pk_batches(&labels, self.config.batch.p, self.config.batch.k, &mut rng);
        for batch in batches {
            let report = self.step(ds, &labels, &batch, lr, &mut rng)?;
            log(&StepRecord {
                epoch: self.epoch,
                step: self.step,
                lr,
                report,
            });
        }
        self.epoch += 1;
        Ok(())
    }

    /// One optimisation step on the samples `batch` (indices into the train split).
    pub fn step(
        &mut self,
        ds: &Dataset,
        labels: &[usize],
        batch: &[usize],
        lr: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<LossReport> {
        let cfg = &self.config;
        let model = &self.model;
        let lc = &cfg.losses;
        let weights = cfg.effective_weights();

        let mut images: Vec<Image> = Vec::with_capacity(batch.len());
        let mut masks: Vec<Option<PartMask>> = Vec::with_capacity(batch.len());
        for &i in batch {
            let s = &ds.train[i];
            let (img, m) = augment(&s.image, s.mask.as_ref(), &cfg.augment, rng);
            images.push(img);
            masks.push(m);
        }
        let plabels: Vec<Option<PatchLabels>> = masks
            .iter()
            .map(|m| m.as_ref().map(|m| model.patch_labels(m)).transpose())
            .collect::<Result<_>>()?;
        let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();

        let tape = Tape::new();
        let b = model.store.bind(&tape);
        let mut drop = Dropout::train(model.cfg.decoder.dropout, mix(cfg.seed, 0xd0_0000 + self.step));
        let refs: Vec<&Image> = images.iter().collect();
        let (prompts, outs) = model.forward(&tape, &b, &refs, &plabels, &mut drop)?;

        let mut align = Vec::new();
        let mut attn = Vec::new();
        let mut div = Vec::new();
        let mut vis = Vec::new();
        for ((o, l), m) in outs.iter().zip(&plabels).zip(&masks) {
            if let Some(l) = l {
                let a = alignment_loss_var(score_map_var(o.patches, prompts), l, lc.target_mode)?;
                if !a.no_valid {
                    align.push(a.loss);
                }
                let al = &cfg.attn_loss;
                let picked: Vec<Var<'_>> = al
                    .blocks
                    .select(&o.affinities)
                    .into_iter()
                    .map(|aff| attention_loss_tempered_var(aff, l, al.target_temperature))
                    .collect::<Result<_>>()?;
                if let Some(v) = mean_of(&tape, &picked) {
                    attn.push(v);
                }
            }
            if let Some(m) = m {
                let t = visibility_targets(m, MASK_THRESHOLD);
                vis.push(focal_loss_var(o.vis, &t, lc.focal_alpha, lc.focal_gamma)?);
            }
            div.push(diversity_loss_var(o.parts).loss);
        }

        let globals: Vec<Var<'_>> = outs.iter().map(|o| o.global).collect();
        let concats: Vec<Var<'_>> = outs.iter().map(|o| o.concat).collect();
        let f_g = tape.concat_rows(&globals);
        let f_c = tape.concat_rows(&concats);
        let eps = lc.label_smoothing;

        let mut terms: Vec<(LossTerm, Var<'_>)> = vec![
            (LossTerm::IdG, id_loss_var(model.cls_g.forward(&b, f_g), &ys, eps)?),
            (LossTerm::TriG, triplet_loss_var(f_g, &ys, lc.triplet_margin)?),
            (LossTerm::IdC, id_loss_var(model.cls_c.forward(&b, f_c), &ys, eps)?),
            (LossTerm::TriC, triplet_loss_var(f_c, &ys, lc.triplet_margin)?),
            (LossTerm::PclG, self.bank_g.pcl_loss_var(f_g, &ys)?),
            (LossTerm::PclP, self.bank_p.pcl_loss_var(f_c, &ys)?),
        ];
        for (t, v) in [
            (LossTerm::Div, mean_of(&tape, &div)),
            (LossTerm::Align, mean_of(&tape, &align)),
            (LossTerm::Attn, mean_of(&tape, &attn)),
            (LossTerm::Vis, mean_of(&tape, &vis)),
        ] {
            if let Some(v) = v {
                terms.push((t, v));
            }
        }
        // a zero-weight term is reported but kept off the gradient path, so
        // weight 0 and a disabled flag give the same trajectory
        let active: Vec<_> = terms.iter().copied().filter(|(t, _)| weights.get(*t) != 0.0).collect();
        let (total, mut report) = total_loss(&tape, &active, &weights)?;
        for (t, v) in &terms {
            let x = v.item();
            if !x.is_finite() {
                return Err(ProfdError::NonFiniteLoss {
                    term: t.name().to_string(),
                    value: x,
                });
            }
            report.set_term(*t, x);
        }

        let grads = total.backward();
        let gs: Vec<Option<Mat>> = b.vars().iter().map(|v| grads.get(*v).cloned()).collect();
        let g_vals = f_g.value();
        let c_vals = f_c.value();
        self.adam.step(&mut self.model.store, &gs, lr)?;

        if cfg.ablation.global_mem {
            for (row, &y) in g_vals.rows().into_iter().zip(&ys) {
                self.bank_g.update_default(y, row)?;
            }
        }
        if cfg.ablation.local_mem {
            for (row, &y) in c_vals.rows().into_iter().zip(&ys) {
                self.bank_p.update_default(y, row)?;
            }
        }
        self.step += 1;
        Ok(report)
    }

    /// Trains until `config.schedule.epochs` epochs are complete.
    pub fn run(&mut self, ds: &Dataset, log: &mut dyn FnMut(&StepRecord)) -> Result<()> {
        while self.epoch < self.config.schedule.epochs {
            self.train_epoch(ds, log)?;
        }
        Ok(())
    }
}

fn mean_of<'t>(tape: &'t Tape, v: &[Var<'t>]) -> Option<Var<'t>> {
    (!v.is_empty()).then(|| tape.sum(v).scale(1.0 / v.len() as f64))
}

/// Global bank from the encoder's global features; local bank from the
/// mask-pooled patch features (or the model's concatenated parts when
/// masks are missing).
fn init_banks(cfg: &TrainConfig, model: &ProfdModel, ds: &Dataset) -> Result<(MemoryBank, MemoryBank)> {
    let labels = ds.train_labels();
    let n_ids = model.dims().n_ids;
    let (d, n) = (model.dims().d, model.dims().n_parts);
    let mut g = Mat::zeros((ds.train.len(), d));
    let mut c = Mat::zeros((ds.train.len(), n * d));
    for (k, s) in ds.train.iter().enumerate() {
        let f = model.enc.encode_image(&model.store, &s.image, model.dims())?;
        g.row_mut(k).assign(&f.global.row(0));
        match &s.mask {
            Some(m) => c.row_mut(k).assign(&wap_concat(&f.patches, &model.patch_labels(m)?)),
            None => {
                let e = model.embed(&s.image, None)?;
                c.row_mut(k).assign(
                    &Mat::from_shape_vec((1, n * d), e.parts.iter().cloned().collect())
                        .expect("n*d")
                        .row(0),
                );
            }
        }
    }
    let lc = &cfg.losses;
    Ok((
        MemoryBank::from_features(&g, &labels, n_ids, lc.momentum_g, lc.pcl_tau)?,
        MemoryBank::from_features(&c, &labels, n_ids, lc.momentum_p, lc.pcl_tau)?,
    ))
}

/// Convenience wrapper: initialise and train for the configured epochs.
pub fn train(config: TrainConfig, ds: &Dataset, log: &mut dyn FnMut(&StepRecord)) -> Result<TrainState> {
    let mut st = TrainState::init(config, ds)?;
    st.run(ds, log)?;
    Ok(st)
}

/// Inference embeddings of a split.
pub fn embed_samples(model: &ProfdModel, samples: &[Sample]) -> Result<EmbeddingSet> {
    let dims = model.dims();
    let mut set = EmbeddingSet::new(dims.d, dims.n_parts);
    for s in samples {
        set.push(model.embed(&s.image, s.mask.as_ref())?, s.id, s.cam)?;
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub metrics: MetricsReport,
    pub query: EmbeddingSet,
    pub gallery: EmbeddingSet,
    /// Agreement of thresholded visibility with the ground-truth occlusion
    /// flags over query and gallery; `None` when no flags are known.
    pub visibility_accuracy: Option<f64>,
}

/// Embeds query and gallery and scores retrieval.
pub fn evaluate(model: &ProfdModel, ds: &Dataset, binarize: bool) -> Result<EvalOutcome> {
    if ds.query.is_empty() || ds.gallery.is_empty() {
        return Err(ProfdError::InvalidInput("query or gallery split is empty".into()));
    }
    let query = embed_samples(model, &ds.query)?;
    let gallery = embed_samples(model, &ds.gallery)?;
    let metrics = evaluate_sets(&query, &gallery, binarize)?;
    let mut agree = 0usize;
    let mut total = 0usize;
    for (s, e) in ds
        .query
        .iter()
        .chain(&ds.gallery)
        .zip(query.items.iter().chain(&gallery.items))
    {
        if let Some(occ) = &s.occluded_parts {
            for (o, v) in occ.iter().zip(&e.embedding.visibility) {
                total += 1;
                if (*v >= VISIBILITY_THRESHOLD) != *o {
                    agree += 1;
                }
            }
        }
    }
    Ok(EvalOutcome {
        metrics,
        query,
        gallery,
        visibility_accuracy: (total > 0).then(|| agree as f64 / total as f64),
    })
}
