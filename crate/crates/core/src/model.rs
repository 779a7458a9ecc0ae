//! The assembled network: encoder projection, prompt bank, hybrid decoder,
//! visibility head and the two identity classifiers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{pool_mask, PatchLabels, TargetMode};
use crate::autograd::{Mat, Tape, Var};
use crate::decoder::{concat_parts, DecoderConfig, HybridDecoder};
use crate::dims::Dims;
use crate::encoder::{EncoderConfig, EncoderHandle, Image};
use crate::error::{ProfdError, Result};
use crate::mask::PartMask;
use crate::memory::weighted_average_pool_var;
use crate::params::{Bound, Dropout, Linear, ParamStore};
use crate::prompt::{PromptBank, DEFAULT_PARTS};
use crate::visibility::{Embedding, VisibilityHead};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: Dims,
    pub encoder: EncoderConfig,
    pub parts: Vec<String>,
    pub m_prefix: usize,
    pub decoder: DecoderConfig,
    pub target_mode: TargetMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dims: Dims::default(),
            encoder: EncoderConfig::default(),
            parts: DEFAULT_PARTS.iter().map(|s| s.to_string()).collect(),
            m_prefix: 4,
            decoder: DecoderConfig::default(),
            target_mode: TargetMode::Soft,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// False when both attention branches are disabled: parts then come
    /// from mask-weighted pooling of the patch features.
    pub fn uses_decoder(&self) -> bool {
        self.decoder.spa || self.decoder.sea
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.parts.len() != self.dims.n_parts {
            return Err(ProfdError::Config(format!(
                "{} part names but dims.n_parts = {}",
                self.parts.len(),
                self.dims.n_parts
            )));
        }
        if self.uses_decoder() {
            self.decoder.validate(self.dims.d)?;
        }
        Ok(())
    }
}

pub struct ProfdModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub enc: EncoderHandle,
    pub prompts: PromptBank,
    pub decoder: HybridDecoder,
    pub vis: VisibilityHead,
    pub cls_g: Linear,
    pub cls_c: Linear,
}

/// Per-image training outputs.
pub struct ImageOutputs<'t> {
    /// `[HW × d]` projected patch tokens.
    pub patches: Var<'t>,
    /// `[1 × d]` global feature.
    pub global: Var<'t>,
    /// `[N × d]` part features.
    pub parts: Var<'t>,
    /// `[1 × N·d]` concatenated part features.
    pub concat: Var<'t>,
    /// `[1 × N]` visibility scores.
    pub vis: Var<'t>,
    /// Per-block spatial affinities `[N × HW]`; empty when that branch is off.
    pub affinities: Vec<Var<'t>>,
    pub attn_maps: Vec<Mat>,
}

impl ProfdModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let enc = EncoderHandle::from_config(&cfg.encoder, &cfg.dims, &mut store)?;
        let prompts = PromptBank::new(&mut store, &enc, &cfg.parts, cfg.m_prefix, cfg.seed)?;
        // parameters are created even when the decoder is bypassed so every
        // configuration shares one layout
        let mut dec_cfg = cfg.decoder.clone();
        if !cfg.uses_decoder() {
            dec_cfg.spa = true;
            dec_cfg.sea = true;
        }
        let mut decoder = HybridDecoder::new(&mut store, dec_cfg, cfg.dims.d, cfg.seed)?;
        decoder.cfg = cfg.decoder.clone();
        let (d, n, c) = (cfg.dims.d, cfg.dims.n_parts, cfg.dims.n_ids);
        let vis = VisibilityHead::new(&mut store, n, d, cfg.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc1a5_5000);
        let cls_g = Linear::new(&mut store, &mut rng, "classifier.global", d, c, false);
        let cls_c = Linear::new(&mut store, &mut rng, "classifier.concat", n * d, c, false);
        Ok(ProfdModel {
            cfg,
            store,
            enc,
            prompts,
            decoder,
            vis,
            cls_g,
            cls_c,
        })
    }

    pub fn dims(&self) -> &Dims {
        &self.cfg.dims
    }

    pub fn patch_labels(&self, mask: &PartMask) -> Result<PatchLabels> {
        if mask.n != self.cfg.dims.n_parts {
            return Err(ProfdError::DimensionMismatch(format!(
                "mask has {} channels, model has {} parts",
                mask.n, self.cfg.dims.n_parts
            )));
        }
        pool_mask(mask, &self.cfg.dims)
    }

    /// Part features of one image: the decoder output, or mask-weighted
    /// pooling when the decoder is bypassed (uniform pooling without a mask).
    fn parts_for<'t>(
        &self,
        b: &Bound<'t>,
        prompts: Var<'t>,
        patches: Var<'t>,
        labels: Option<&PatchLabels>,
        drop: &mut Dropout,
    ) -> Result<(Var<'t>, Vec<Var<'t>>, Vec<Mat>)> {
        if self.cfg.uses_decoder() {
            let dec = self.decoder.decode(b, prompts, patches, drop)?;
            Ok((dec.parts, dec.affinities, dec.attn_maps))
        } else {
            let hw = self.cfg.dims.n_patches();
            let n = self.cfg.dims.n_parts;
            let uniform;
            let labels = match labels {
                Some(l) => l,
                None => {
                    uniform = PatchLabels::from_labels(
                        self.cfg.dims.grid_h(),
                        self.cfg.dims.grid_w(),
                        Mat::from_elem((hw, n), 1.0 / n as f64),
                    );
                    &uniform
                }
            };
            let maps = labels.labels.t().as_standard_layout().into_owned();
            Ok((weighted_average_pool_var(patches, labels), Vec::new(), vec![maps]))
        }
    }

    /// Training-mode forward over a batch on `tape`. Returns the prompt
    /// embeddings and one output record per image.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        b: &Bound<'t>,
        images: &[&Image],
        labels: &[Option<PatchLabels>],
        drop: &mut Dropout,
    ) -> Result<(Var<'t>, Vec<ImageOutputs<'t>>)> {
        if images.len() != labels.len() {
            return Err(ProfdError::DimensionMismatch(format!(
                "{} images vs {} label maps",
                images.len(),
                labels.len()
            )));
        }
        let prompts = self.prompts.embeddings(tape, b, &self.enc)?;
        let feats = self.enc.encode_images(tape, b, images, &self.cfg.dims)?;
        let mut out = Vec::with_capacity(images.len());
        for (f, l) in feats.into_iter().zip(labels) {
            let (parts, affinities, attn_maps) = self.parts_for(b, prompts, f.patches, l.as_ref(), drop)?;
            let vis = self.vis.forward(b, parts)?;
            out.push(ImageOutputs {
                patches: f.patches,
                global: f.global,
                parts,
                concat: concat_parts(parts),
                vis,
                affinities,
                attn_maps,
            });
        }
        Ok((prompts, out))
    }

    /// Inference embedding of one image (no dropout, no gradients).
    pub fn embed(&self, image: &Image, mask: Option<&PartMask>) -> Result<Embedding> {
        let (e, _) = self.embed_with_maps(image, mask)?;
        Ok(e)
    }

    /// As [`Self::embed`], also returning the per-block part-to-patch
    /// attention maps `[N × HW]`.
    pub fn embed_with_maps(&self, image: &Image, mask: Option<&PartMask>) -> Result<(Embedding, Vec<Mat>)> {
        let tape = Tape::new();
        let b = self.store.bind_frozen(&tape);
        let labels = match (mask, self.cfg.uses_decoder()) {
            (Some(m), false) => Some(self.patch_labels(m)?),
            _ => None,
        };
        let prompts = tape.constant(self.prompts.embeddings_eval(&self.store, &self.enc)?);
        let f = self.enc.encode_images(&tape, &b, &[image], &self.cfg.dims)?[0];
        let mut drop = Dropout::eval();
        let (parts, _, maps) = self.parts_for(&b, prompts, f.patches, labels.as_ref(), &mut drop)?;
        let vis = self.vis.forward(&b, parts)?;
        Ok((
            Embedding {
                global: f.global.value().iter().cloned().collect(),
                parts: parts.value(),
                visibility: vis.value().iter().cloned().collect(),
            },
            maps,
        ))
    }
}
