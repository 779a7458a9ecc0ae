//! Training configuration, read from TOML.
//!
//! Every key may be written flat with dots (`optimizer.lr = 1e-3`) or
//! grouped under a `[optimizer]` table; both spell the same document.
//! Unknown keys are rejected. `PROFD_SEED` in the environment overrides
//! `seed`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::TargetMode;
use crate::data::AugmentConfig;
use crate::decoder::{AttnBlocks, DecoderConfig};
use crate::dims::Dims;
use crate::encoder::EncoderConfig;
use crate::error::{ProfdError, Result};
use crate::model::ModelConfig;
use crate::objectives::LossWeights;
use crate::optim::{AdamConfig, MultiStepLr};
use crate::prompt::DEFAULT_PARTS;

pub const SEED_ENV: &str = "PROFD_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimsConfig {
    pub img_h: usize,
    pub img_w: usize,
    pub patch: usize,
    pub stride: Option<usize>,
    pub d: usize,
}

impl Default for DimsConfig {
    fn default() -> Self {
        let d = Dims::default();
        DimsConfig {
            img_h: d.img_h,
            img_w: d.img_w,
            patch: d.patch,
            stride: d.stride,
            d: d.d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub m_prefix: usize,
    pub parts: Vec<String>,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            m_prefix: 4,
            parts: DEFAULT_PARTS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub epochs: usize,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            epochs: 120,
            milestones: vec![30, 50],
            gamma: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchConfig {
    pub p: usize,
    pub k: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig { p: 16, k: 4 }
    }
}

/// Which affinities the attention loss reads and how sharp its target is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttnLossConfig {
    pub blocks: AttnBlocks,
    /// Target is `softmax(M_pᵀ / target_temperature)`.
    pub target_temperature: f64,
}

impl Default for AttnLossConfig {
    fn default() -> Self {
        AttnLossConfig {
            blocks: AttnBlocks::First,
            target_temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub pcl_tau: f64,
    pub momentum_g: f64,
    pub momentum_p: f64,
    pub triplet_margin: f64,
    pub label_smoothing: f64,
    pub target_mode: TargetMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            focal_alpha: 0.65,
            focal_gamma: 2.0,
            pcl_tau: 0.05,
            momentum_g: 0.2,
            momentum_p: 0.2,
            triplet_margin: 0.3,
            label_smoothing: 0.1,
            target_mode: TargetMode::Soft,
        }
    }
}

/// Component switches for ablations. Attention branches live in
/// `decoder.spa` / `decoder.sea`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub global_mem: bool,
    pub local_mem: bool,
    pub align: bool,
    pub div: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            global_mem: true,
            local_mem: true,
            align: true,
            div: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Threshold visibility scores at 0.5 before weighting distances.
    pub binarize_visibility: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            binarize_visibility: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct TrainConfig {
    pub seed: u64,
    pub dims: DimsConfig,
    pub encoder: EncoderConfig,
    pub prompt: PromptConfig,
    pub decoder: DecoderConfig,
    pub optimizer: AdamConfig,
    pub schedule: ScheduleConfig,
    pub batch: BatchConfig,
    pub losses: LossConfig,
    pub attn_loss: AttnLossConfig,
    pub ablation: AblationFlags,
    pub augment: AugmentConfig,
    pub eval: EvalConfig,
}

impl TrainConfig {
    /// Small images, a short schedule and a sharp attention target: the
    /// setting used for synthetic runs on one CPU core.
    pub fn desk() -> Self {
        let mut c = TrainConfig::default();
        c.dims.img_h = 64;
        c.dims.img_w = 32;
        c.dims.patch = 8;
        c.dims.d = 64;
        c.optimizer.lr = 2e-3;
        c.schedule = ScheduleConfig {
            epochs: 15,
            milestones: vec![12],
            gamma: 0.1,
        };
        c.batch = BatchConfig { p: 3, k: 2 };
        c.attn_loss.target_temperature = 0.1;
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ProfdError::Config(e.to_string()))
    }

    /// Reads a config file and applies the `PROFD_SEED` override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ProfdError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| ProfdError::Config(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn dims(&self, n_ids: usize) -> Dims {
        Dims {
            img_h: self.dims.img_h,
            img_w: self.dims.img_w,
            patch: self.dims.patch,
            stride: self.dims.stride,
            d: self.dims.d,
            n_parts: self.prompt.parts.len(),
            n_ids,
        }
    }

    pub fn model_config(&self, n_ids: usize) -> ModelConfig {
        ModelConfig {
            dims: self.dims(n_ids),
            encoder: self.encoder.clone(),
            parts: self.prompt.parts.clone(),
            m_prefix: self.prompt.m_prefix,
            decoder: self.decoder.clone(),
            target_mode: self.losses.target_mode,
            seed: self.seed,
        }
    }

    pub fn lr_schedule(&self) -> MultiStepLr {
        MultiStepLr {
            base: self.optimizer.lr,
            milestones: self.schedule.milestones.clone(),
            gamma: self.schedule.gamma,
        }
    }

    /// Weights with ablation switches folded in (a disabled term weighs 0).
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.losses.weights;
        let f = &self.ablation;
        if !f.align {
            w.align = 0.0;
        }
        if !f.div {
            w.div = 0.0;
        }
        if !f.global_mem {
            w.pcl_g = 0.0;
        }
        if !f.local_mem {
            w.pcl_p = 0.0;
        }
        if !self.decoder.spa {
            w.attn = 0.0;
        }
        w
    }

    /// True when any enabled term needs part masks.
    pub fn needs_masks(&self) -> bool {
        let w = self.effective_weights();
        w.align != 0.0 || w.attn != 0.0 || w.vis != 0.0 || !(self.decoder.spa || self.decoder.sea)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ProfdError::Config(m));
        self.model_config(1).validate()?;
        if self.batch.p < 2 || self.batch.k < 2 {
            return bad(format!(
                "batch needs P >= 2 and K >= 2 for triplet mining, got {}x{}",
                self.batch.p, self.batch.k
            ));
        }
        if !(self.optimizer.lr > 0.0) {
            return bad(format!("optimizer.lr = {} must be > 0", self.optimizer.lr));
        }
        if !(self.schedule.gamma > 0.0) {
            return bad(format!("schedule.gamma = {} must be > 0", self.schedule.gamma));
        }
        if !(self.attn_loss.target_temperature > 0.0) {
            return bad(format!(
                "attn_loss.target_temperature = {} must be > 0",
                self.attn_loss.target_temperature
            ));
        }
        if !(self.losses.pcl_tau > 0.0) {
            return bad(format!("losses.pcl_tau = {} must be > 0", self.losses.pcl_tau));
        }
        for (k, m) in [
            ("momentum_g", self.losses.momentum_g),
            ("momentum_p", self.losses.momentum_p),
        ] {
            if !(0.0..=1.0).contains(&m) {
                return bad(format!("losses.{k} = {m} outside [0,1]"));
            }
        }
        if !(0.0..1.0).contains(&self.losses.label_smoothing) {
            return bad(format!(
                "losses.label_smoothing = {} outside [0,1)",
                self.losses.label_smoothing
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }
}
