//! Adam with L2 weight decay and the multi-step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::error::{ProfdError, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot {
    pub m: Mat,
    pub v: Mat,
    pub step: u64,
}

/// Per-parameter moments; a parameter that received no gradient in a step
/// is left untouched and its step count does not advance.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub slots: Vec<Option<AdamSlot>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n_params: usize) -> Self {
        Adam {
            cfg,
            slots: vec![None; n_params],
        }
    }

    /// Applies one update with learning rate `lr`; `grads[i]` belongs to
    /// parameter `i` of `store`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Mat>], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.slots.len() != store.len() {
            return Err(ProfdError::DimensionMismatch(format!(
                "{} gradients / {} optimizer slots for {} parameters",
                grads.len(),
                self.slots.len(),
                store.len()
            )));
        }
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.cfg;
        for ((theta, g), slot) in store.values_mut().zip(grads).zip(&mut self.slots) {
            let Some(g) = g else { continue };
            if g.dim() != theta.dim() {
                return Err(ProfdError::DimensionMismatch(format!(
                    "gradient {:?} vs parameter {:?}",
                    g.dim(),
                    theta.dim()
                )));
            }
            let s = slot.get_or_insert_with(|| AdamSlot {
                m: Mat::zeros(theta.dim()),
                v: Mat::zeros(theta.dim()),
                step: 0,
            });
            s.step += 1;
            let bc1 = 1.0 - beta1.powi(s.step as i32);
            let bc2 = 1.0 - beta2.powi(s.step as i32);
            ndarray::Zip::from(theta)
                .and(g)
                .and(&mut s.m)
                .and(&mut s.v)
                .for_each(|th, &gr, m, v| {
                    let gr = gr + weight_decay * *th;
                    *m = beta1 * *m + (1.0 - beta1) * gr;
                    *v = beta2 * *v + (1.0 - beta2) * gr * gr;
                    *th -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
        Ok(())
    }
}

/// Step decay by `gamma` at every milestone epoch that has been reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStepLr {
    pub base: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl MultiStepLr {
    /// Learning rate for a 0-based epoch. When `1/gamma` is an integer the
    /// base is divided by its power, so `5e-5` decays to exactly `5e-6` and
    /// `5e-7` instead of accumulating rounding from repeated products.
    pub fn lr(&self, epoch: usize) -> f64 {
        let k = self.milestones.iter().filter(|m| epoch >= **m).count() as i32;
        let inv = 1.0 / self.gamma;
        if (inv - inv.round()).abs() < 1e-9 && inv.round() >= 1.0 {
            self.base / inv.round().powi(k)
        } else {
            self.base * self.gamma.powi(k)
        }
    }
}
