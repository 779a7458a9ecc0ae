//! Query–gallery distances and CMC / mAP under the single-query protocol,
//! plus the PFEM embedding file format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::error::{ProfdError, Result};
use crate::visibility::{combine_distances, cosine_distance, Embedding};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingItem {
    pub embedding: Embedding,
    pub id: u32,
    pub cam: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingSet {
    pub d: usize,
    pub n_parts: usize,
    pub items: Vec<EmbeddingItem>,
}

impl EmbeddingSet {
    pub fn new(d: usize, n_parts: usize) -> Self {
        EmbeddingSet {
            d,
            n_parts,
            items: Vec::new(),
        }
    }

    pub fn push(&mut self, embedding: Embedding, id: u32, cam: u32) -> Result<()> {
        if embedding.global.len() != self.d
            || embedding.parts.dim() != (self.n_parts, self.d)
            || embedding.visibility.len() != self.n_parts
        {
            return Err(ProfdError::DimensionMismatch(format!(
                "embedding global {} parts {:?} visibility {} vs set d={} N={}",
                embedding.global.len(),
                embedding.parts.dim(),
                embedding.visibility.len(),
                self.d,
                self.n_parts
            )));
        }
        self.items.push(EmbeddingItem { embedding, id, cam });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.items.iter().map(|i| i.id).collect()
    }

    pub fn cams(&self) -> Vec<u32> {
        self.items.iter().map(|i| i.cam).collect()
    }

    /// Rounds every value through `f32`, the precision PFEM stores.
    pub fn quantized(&self) -> Self {
        let q = |v: f64| v as f32 as f64;
        let mut out = self.clone();
        for it in &mut out.items {
            it.embedding.global.iter_mut().for_each(|v| *v = q(*v));
            it.embedding.parts.mapv_inplace(q);
            it.embedding.visibility.iter_mut().for_each(|v| *v = q(*v));
        }
        out
    }
}

/// `[|Q| × |G|]` matrix of visibility-gated distances.
pub fn distance_matrix(q: &EmbeddingSet, g: &EmbeddingSet, binarize: bool) -> Result<Mat> {
    if q.d != g.d || q.n_parts != g.n_parts {
        return Err(ProfdError::DimensionMismatch(format!(
            "query d={} N={} vs gallery d={} N={}",
            q.d, q.n_parts, g.d, g.n_parts
        )));
    }
    let n = q.n_parts;
    let mut out = Mat::zeros((q.len(), g.len()));
    let mut part_d = vec![0.0; n];
    for (i, qi) in q.items.iter().enumerate() {
        let qe = &qi.embedding;
        for (j, gj) in g.items.iter().enumerate() {
            let ge = &gj.embedding;
            for (k, pd) in part_d.iter_mut().enumerate() {
                *pd = cosine_distance(
                    qe.parts.row(k).as_slice().expect("row-major"),
                    ge.parts.row(k).as_slice().expect("row-major"),
                );
            }
            let dg = cosine_distance(&qe.global, &ge.global);
            out[[i, j]] = combine_distances(&part_d, dg, &qe.visibility, &ge.visibility, binarize);
        }
    }
    Ok(out)
}

pub const RANKS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rank_k: BTreeMap<usize, f64>,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub n_query: usize,
    pub n_gallery: usize,
    /// Queries without any valid gallery match; left out of the averages.
    pub n_skipped: usize,
}

impl MetricsReport {
    pub fn rank1(&self) -> f64 {
        self.rank_k[&1]
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.rank_k {
            s.push_str(&format!("rank{k}={v:.6}\n"));
        }
        s.push_str(&format!(
            "mAP={:.6}\nn_query={}\nn_gallery={}\nn_skipped={}\n",
            self.map, self.n_query, self.n_gallery, self.n_skipped
        ));
        s
    }
}

/// Gallery order for one query: ascending distance, ties by index.
pub fn ranked_gallery(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    order
}

/// CMC at ranks 1/5/10 and mAP. Gallery items sharing both identity and
/// camera with the query are removed before ranking.
pub fn cmc_map(dist: &Mat, q_ids: &[u32], g_ids: &[u32], q_cams: &[u32], g_cams: &[u32]) -> Result<MetricsReport> {
    let (nq, ng) = dist.dim();
    if q_ids.len() != nq || q_cams.len() != nq || g_ids.len() != ng || g_cams.len() != ng {
        return Err(ProfdError::DimensionMismatch(format!(
            "distance {nq}x{ng} vs {} query ids, {} query cams, {} gallery ids, {} gallery cams",
            q_ids.len(),
            q_cams.len(),
            g_ids.len(),
            g_cams.len()
        )));
    }
    let mut hits = [0usize; RANKS.len()];
    let mut ap_sum = 0.0;
    let mut valid = 0usize;
    for qi in 0..nq {
        let row: Vec<f64> = dist.row(qi).to_vec();
        let kept: Vec<usize> = ranked_gallery(&row)
            .into_iter()
            .filter(|&g| !(g_ids[g] == q_ids[qi] && g_cams[g] == q_cams[qi]))
            .collect();
        let matches: Vec<bool> = kept.iter().map(|&g| g_ids[g] == q_ids[qi]).collect();
        let n_rel = matches.iter().filter(|m| **m).count();
        if n_rel == 0 {
            continue;
        }
        valid += 1;
        let first = matches.iter().position(|m| *m).expect("n_rel > 0");
        for (h, &k) in hits.iter_mut().zip(&RANKS) {
            if first < k {
                *h += 1;
            }
        }
        let mut found = 0usize;
        let mut ap = 0.0;
        for (pos, m) in matches.iter().enumerate() {
            if *m {
                found += 1;
                ap += found as f64 / (pos + 1) as f64;
            }
        }
        ap_sum += ap / n_rel as f64;
    }
    if valid == 0 {
        return Err(ProfdError::InvalidInput("no query has a valid gallery match".into()));
    }
    if valid < nq {
        log::warn!("{} of {nq} queries have no valid gallery match", nq - valid);
    }
    Ok(MetricsReport {
        rank_k: RANKS
            .iter()
            .zip(hits)
            .map(|(&k, h)| (k, h as f64 / valid as f64))
            .collect(),
        map: ap_sum / valid as f64,
        n_query: nq,
        n_gallery: ng,
        n_skipped: nq - valid,
    })
}

/// Distances plus metrics in one call.
pub fn evaluate_sets(q: &EmbeddingSet, g: &EmbeddingSet, binarize: bool) -> Result<MetricsReport> {
    let dist = distance_matrix(q, g, binarize)?;
    cmc_map(&dist, &q.ids(), &g.ids(), &q.cams(), &g.cams())
}

const PFEM_MAGIC: &[u8; 4] = b"PFEM";
const PFEM_VERSION: u32 = 1;
const PFEM_HEADER: usize = 20;

pub fn encode_embeddings(set: &EmbeddingSet) -> Vec<u8> {
    let (d, n) = (set.d, set.n_parts);
    let per_item = (d + n * d + n) * 4 + 8;
    let mut out = Vec::with_capacity(PFEM_HEADER + per_item * set.len());
    out.extend_from_slice(PFEM_MAGIC);
    for v in [PFEM_VERSION, set.len() as u32, d as u32, n as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for it in &set.items {
        let e = &it.embedding;
        for v in e.global.iter().chain(e.parts.iter()).chain(e.visibility.iter()) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend_from_slice(&it.id.to_le_bytes());
        out.extend_from_slice(&it.cam.to_le_bytes());
    }
    out
}

pub fn decode_embeddings(bytes: &[u8], path: &Path) -> Result<EmbeddingSet> {
    let fmt = |offset: usize, reason: String| ProfdError::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    let truncated = |expected: u64| ProfdError::Truncated {
        path: path.to_path_buf(),
        expected,
        found: bytes.len() as u64,
    };
    if bytes.len() < PFEM_HEADER {
        return Err(truncated(PFEM_HEADER as u64));
    }
    if &bytes[..4] != PFEM_MAGIC {
        return Err(fmt(0, format!("bad magic {:?}", &bytes[..4])));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != PFEM_VERSION {
        return Err(fmt(4, format!("unsupported version {version}")));
    }
    let (count, d, n) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
    if d == 0 {
        return Err(fmt(12, "embedding width is zero".into()));
    }
    if n == 0 {
        return Err(fmt(16, "part count is zero".into()));
    }
    let per_item = ((d + n * d + n) * 4 + 8) as u64;
    let expected = PFEM_HEADER as u64 + per_item * count as u64;
    if (bytes.len() as u64) < expected {
        return Err(truncated(expected));
    }
    if bytes.len() as u64 > expected {
        return Err(fmt(
            expected as usize,
            format!("{} trailing bytes", bytes.len() as u64 - expected),
        ));
    }
    let f32s = |off: usize, k: usize| -> Vec<f64> {
        bytes[off..off + 4 * k]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect()
    };
    let mut set = EmbeddingSet::new(d, n);
    let mut off = PFEM_HEADER;
    for _ in 0..count {
        let global = f32s(off, d);
        off += 4 * d;
        let parts = Mat::from_shape_vec((n, d), f32s(off, n * d)).expect("n*d values");
        off += 4 * n * d;
        let visibility = f32s(off, n);
        off += 4 * n;
        let (id, cam) = (u32_at(off), u32_at(off + 4));
        off += 8;
        set.push(
            Embedding {
                global,
                parts,
                visibility,
            },
            id,
            cam,
        )?;
    }
    Ok(set)
}

pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    std::fs::write(path, encode_embeddings(set)).map_err(|e| ProfdError::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let bytes = std::fs::read(path).map_err(|e| ProfdError::io(path, e))?;
    decode_embeddings(&bytes, path)
}
