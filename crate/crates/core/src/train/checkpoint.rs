//! Binary checkpoints.
//!
//! Layout: `"PFCK"`, u32 version, u64 header length, a JSON header (config,
//! its hash, identity table, progress, tensor directory, optimizer step
//! counts), then every tensor of the directory as little-endian f64 in
//! row-major order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::trainer::TrainState;
use crate::autograd::Mat;
use crate::error::{ProfdError, Result};
use crate::memory::MemoryBank;
use crate::model::ProfdModel;
use crate::optim::{Adam, AdamSlot};

pub const CHECKPOINT_FILE: &str = "checkpoint.pfck";

const MAGIC: &[u8; 4] = b"PFCK";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    config_hash: String,
    train_ids: Vec<u32>,
    epoch: usize,
    step: u64,
    adam_steps: Vec<Option<u64>>,
    tensors: Vec<TensorEntry>,
}

fn tensors(st: &TrainState) -> Vec<(String, &Mat)> {
    let mut out: Vec<(String, &Mat)> = st
        .model
        .store
        .iter()
        .map(|(_, name, m)| (format!("param.{name}"), m))
        .collect();
    out.push(("bank.global".into(), &st.bank_g.centroids));
    out.push(("bank.local".into(), &st.bank_p.centroids));
    for ((_, name, _), slot) in st.model.store.iter().zip(&st.adam.slots) {
        if let Some(s) = slot {
            out.push((format!("adam.m.{name}"), &s.m));
            out.push((format!("adam.v.{name}"), &s.v));
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, st: &TrainState) -> Result<()> {
    let ts = tensors(st);
    let header = Header {
        config: st.config.clone(),
        config_hash: st.config.hash(),
        train_ids: st.train_ids.clone(),
        epoch: st.epoch,
        step: st.step,
        adam_steps: st.adam.slots.iter().map(|s| s.as_ref().map(|s| s.step)).collect(),
        tensors: ts
            .iter()
            .map(|(name, m)| TensorEntry {
                name: name.clone(),
                rows: m.nrows(),
                cols: m.ncols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ProfdError::Serde(e.to_string()))?;
    let n_vals: usize = ts.iter().map(|(_, m)| m.len()).sum();
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * n_vals);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, m) in &ts {
        for v in m.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| ProfdError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| ProfdError::io(path, e))?;
    let fmt = |offset: usize, reason: String| ProfdError::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    let truncated = |expected: usize| ProfdError::Truncated {
        path: path.to_path_buf(),
        expected: expected as u64,
        found: bytes.len() as u64,
    };
    if bytes.len() < 16 {
        return Err(truncated(16));
    }
    if &bytes[..4] != MAGIC {
        return Err(fmt(0, "bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(fmt(4, format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 16 + hlen {
        return Err(truncated(16 + hlen));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + hlen]).map_err(|e| fmt(16, format!("header: {e}")))?;
    if header.config.hash() != header.config_hash {
        return Err(fmt(16, "config hash does not match the stored config".into()));
    }
    let expected = 16 + hlen + 8 * header.tensors.iter().map(|t| t.rows * t.cols).sum::<usize>();
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(fmt(expected, "trailing bytes".into()));
    }
    let mut off = 16 + hlen;
    let mut table = std::collections::HashMap::new();
    for t in &header.tensors {
        let n = t.rows * t.cols;
        let vals: Vec<f64> = bytes[off..off + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        off += 8 * n;
        table.insert(
            t.name.clone(),
            Mat::from_shape_vec((t.rows, t.cols), vals).expect("rows*cols"),
        );
    }
    let mut take = |name: String, shape: (usize, usize)| -> Result<Mat> {
        let m = table.remove(&name).ok_or_else(|| ProfdError::Format {
            path: path.to_path_buf(),
            offset: 16,
            reason: format!("tensor {name} missing"),
        })?;
        if m.dim() != shape {
            return Err(ProfdError::DimensionMismatch(format!(
                "checkpoint tensor {name} is {:?}, model expects {shape:?}",
                m.dim()
            )));
        }
        Ok(m)
    };

    let config = header.config;
    let mut model = ProfdModel::new(config.model_config(header.train_ids.len()))?;
    let names: Vec<(String, (usize, usize))> = model.store.iter().map(|(_, n, m)| (n.to_string(), m.dim())).collect();
    for ((name, shape), v) in names.iter().zip(model.store.values_mut()) {
        *v = take(format!("param.{name}"), *shape)?;
    }
    let (c, d, n) = (header.train_ids.len(), model.dims().d, model.dims().n_parts);
    let lc = &config.losses;
    let bank_g = MemoryBank {
        centroids: take("bank.global".into(), (c, d))?,
        momentum: lc.momentum_g,
        temperature: lc.pcl_tau,
    };
    let bank_p = MemoryBank {
        centroids: take("bank.local".into(), (c, n * d))?,
        momentum: lc.momentum_p,
        temperature: lc.pcl_tau,
    };
    if header.adam_steps.len() != names.len() {
        return Err(fmt(16, "optimizer state does not match the parameter list".into()));
    }
    let mut adam = Adam::new(config.optimizer, names.len());
    for ((slot, step), (name, shape)) in adam.slots.iter_mut().zip(&header.adam_steps).zip(&names) {
        if let Some(step) = step {
            *slot = Some(AdamSlot {
                m: take(format!("adam.m.{name}"), *shape)?,
                v: take(format!("adam.v.{name}"), *shape)?,
                step: *step,
            });
        }
    }
    Ok(TrainState {
        config,
        model,
        adam,
        bank_g,
        bank_p,
        train_ids: header.train_ids,
        epoch: header.epoch,
        step: header.step,
    })
}
