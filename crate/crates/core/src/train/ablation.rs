//! Component ablations: attention branches, memory banks and the two
//! auxiliary losses, each varied with everything else at its full setting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::trainer::{evaluate, train};
use crate::data::Dataset;
use crate::error::Result;
use crate::retrieval::MetricsReport;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `attention`, `memory` or `losses`.
    pub group: String,
    pub label: String,
    pub spa: bool,
    pub sea: bool,
    pub global_mem: bool,
    pub local_mem: bool,
    pub align: bool,
    pub div: bool,
}

impl AblationRow {
    fn key(&self) -> [bool; 6] {
        [
            self.spa,
            self.sea,
            self.global_mem,
            self.local_mem,
            self.align,
            self.div,
        ]
    }

    pub fn is_full(&self) -> bool {
        self.key().iter().all(|b| *b)
    }

    pub fn apply(&self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        c.decoder.spa = self.spa;
        c.decoder.sea = self.sea;
        c.ablation.global_mem = self.global_mem;
        c.ablation.local_mem = self.local_mem;
        c.ablation.align = self.align;
        c.ablation.div = self.div;
        c
    }
}

fn row(group: &str, label: &str, k: [bool; 6]) -> AblationRow {
    AblationRow {
        group: group.into(),
        label: label.into(),
        spa: k[0],
        sea: k[1],
        global_mem: k[2],
        local_mem: k[3],
        align: k[4],
        div: k[5],
    }
}

/// The twelve rows: four attention settings, four memory settings and four
/// auxiliary-loss settings.
pub fn ablation_rows() -> Vec<AblationRow> {
    let t = true;
    let f = false;
    vec![
        row("attention", "w/o attn (pooling)", [f, f, t, t, t, t]),
        row("attention", "SEA only", [f, t, t, t, t, t]),
        row("attention", "SPA only", [t, f, t, t, t, t]),
        row("attention", "SPA + SEA", [t, t, t, t, t, t]),
        row("memory", "w/o memory", [t, t, f, f, t, t]),
        row("memory", "global only", [t, t, t, f, t, t]),
        row("memory", "local only", [t, t, f, t, t, t]),
        row("memory", "global + local", [t, t, t, t, t, t]),
        row("losses", "w/o align, w/o div", [t, t, t, t, f, f]),
        row("losses", "align only", [t, t, t, t, t, f]),
        row("losses", "div only", [t, t, t, t, f, t]),
        row("losses", "align + div", [t, t, t, t, t, t]),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: AblationRow,
    /// `(seed, metrics)` per run.
    pub runs: Vec<(u64, MetricsReport)>,
}

impl AblationResult {
    pub fn mean_map(&self) -> f64 {
        self.runs.iter().map(|(_, m)| m.map).sum::<f64>() / self.runs.len() as f64
    }

    pub fn mean_rank1(&self) -> f64 {
        self.runs.iter().map(|(_, m)| m.rank1()).sum::<f64>() / self.runs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub results: Vec<AblationResult>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<10} {:<22} {:>8} {:>8}  per-seed mAP\n",
            "group", "setting", "mAP", "Rank-1"
        );
        for r in &self.results {
            let per: Vec<String> = r.runs.iter().map(|(seed, m)| format!("{seed}:{:.4}", m.map)).collect();
            s.push_str(&format!(
                "{:<10} {:<22} {:>8.4} {:>8.4}  {}\n",
                r.row.group,
                r.row.label,
                r.mean_map(),
                r.mean_rank1(),
                per.join(" ")
            ));
        }
        s
    }

    pub fn find(&self, label: &str) -> Option<&AblationResult> {
        self.results.iter().find(|r| r.row.label == label)
    }
}

/// Trains and evaluates every row once per seed. Rows with identical
/// settings (the full model appears in every group) share their runs.
pub fn ablation_suite(cfg: &TrainConfig, ds: &Dataset, rows: &[AblationRow], seeds: &[u64]) -> Result<AblationTable> {
    let mut cache: BTreeMap<([bool; 6], u64), MetricsReport> = BTreeMap::new();
    let mut results = Vec::with_capacity(rows.len());
    for r in rows {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let key = (r.key(), seed);
            if let std::collections::btree_map::Entry::Vacant(e) = cache.entry(key) {
                let mut c = r.apply(cfg);
                c.seed = seed;
                log::info!("ablation: {} / {} seed {seed}", r.group, r.label);
                let st = train(c, ds, &mut |_| {})?;
                let out = evaluate(&st.model, ds, st.config.eval.binarize_visibility)?;
                e.insert(out.metrics);
            }
            runs.push((seed, cache[&key].clone()));
        }
        results.push(AblationResult { row: r.clone(), runs });
    }
    Ok(AblationTable { results })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_rows_in_three_groups_of_four() {
        let rows = ablation_rows();
        assert_eq!(rows.len(), 12);
        for g in ["attention", "memory", "losses"] {
            let group: Vec<_> = rows.iter().filter(|r| r.group == g).collect();
            assert_eq!(group.len(), 4);
            assert!(group.last().unwrap().is_full());
        }
    }
}
