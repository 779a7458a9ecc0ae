//! Hybrid-attention decoder.
//!
//! Each block runs, in order:
//! 1. reverse cross-attention: patch tokens attend to the prompts and are
//!    updated residually;
//! 2. spatial-aware attention (unprojected prompt queries, mask-supervised
//!    affinity) and semantic-aware attention (standard multi-head) on the
//!    block's incoming patch tokens;
//! 3. fusion: the two branch outputs are added to the prompts, attend to the
//!    updated patch tokens through another multi-head attention, and pass
//!    through a feed-forward network.
//!
//! Blocks are pre-norm: every attention or FFN input is layer-normalised
//! and its output is added back residually.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::PatchLabels;
use crate::autograd::{softmax_rows, Mat, Tape, Var};
use crate::error::{ProfdError, Result};
use crate::params::{xavier_uniform, Bound, Dropout, LayerNorm, Linear, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    /// Heads of the spatial branch; its affinity is the head-averaged logits.
    pub spa_heads: usize,
    pub spa: bool,
    pub sea: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            layers: 2,
            heads: 8,
            ffn_mult: 4,
            dropout: 0.1,
            spa_heads: 1,
            spa: true,
            sea: true,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        let bad = |m: String| Err(ProfdError::Config(m));
        if self.layers == 0 {
            return bad("decoder.layers must be >= 1".into());
        }
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return bad(format!("d = {d} not divisible by decoder.heads = {}", self.heads));
        }
        if self.spa_heads == 0 || !d.is_multiple_of(self.spa_heads) {
            return bad(format!(
                "d = {d} not divisible by decoder.spa_heads = {}",
                self.spa_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("decoder.dropout = {} outside [0,1)", self.dropout));
        }
        if !self.spa && !self.sea {
            return bad("decoder needs at least one of the spatial/semantic branches".into());
        }
        Ok(())
    }
}

/// Standard multi-head attention parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MhaParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MhaParams {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, heads: usize) -> Self {
        MhaParams {
            q: Linear::new(store, rng, &format!("{name}.q"), d, d, true),
            k: Linear::new(store, rng, &format!("{name}.k"), d, d, true),
            v: Linear::new(store, rng, &format!("{name}.v"), d, d, true),
            o: Linear::new(store, rng, &format!("{name}.o"), d, d, true),
            heads,
        }
    }
}

/// Key and value projections of the spatial branch (no query projection).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialParams {
    pub wk: ParamId,
    pub wv: ParamId,
    pub heads: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FfnParams {
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Attention output plus the softmax weights of every head (`[queries × keys]`).
pub struct Attention<'t> {
    pub out: Var<'t>,
    pub weights: Vec<Mat>,
}

pub struct SpatialAttention<'t> {
    pub out: Var<'t>,
    /// Pre-softmax logits `[N × HW]`, head-averaged.
    pub affinity: Var<'t>,
    pub weights: Vec<Mat>,
}

fn check_width(a: Var<'_>, b: Var<'_>, what: &str) -> Result<()> {
    if a.shape().1 != b.shape().1 {
        return Err(ProfdError::DimensionMismatch(format!(
            "{what}: widths {} and {} differ",
            a.shape().1,
            b.shape().1
        )));
    }
    Ok(())
}

/// `MHA(queries, keys/values)` with output projection.
pub fn multi_head_attention<'t>(
    p: &MhaParams,
    b: &Bound<'t>,
    queries: Var<'t>,
    keys: Var<'t>,
    drop: &mut Dropout,
) -> Result<Attention<'t>> {
    check_width(queries, keys, "multi-head attention")?;
    let d = queries.shape().1;
    let dh = d / p.heads;
    let q = p.q.forward(b, queries);
    let k = p.k.forward(b, keys);
    let v = p.v.forward(b, keys);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(p.heads);
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let qh = q.slice_cols(h * dh, dh);
        let kh = k.slice_cols(h * dh, dh);
        let vh = v.slice_cols(h * dh, dh);
        let attn = qh.matmul(kh.t()).scale(scale).softmax_rows();
        weights.push(attn.value());
        heads.push(drop.apply(attn).matmul(vh));
    }
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        queries.tape().concat_cols(&heads)
    };
    Ok(Attention {
        out: p.o.forward(b, cat),
        weights,
    })
}

/// Spatial-aware attention: `softmax(E_pro (E_pat W_k)ᵀ / √d) · E_pat W_v`.
pub fn spatial_attention<'t>(
    p: &SpatialParams,
    b: &Bound<'t>,
    prompts: Var<'t>,
    patches: Var<'t>,
    drop: &mut Dropout,
) -> Result<SpatialAttention<'t>> {
    check_width(prompts, patches, "spatial attention")?;
    let d = prompts.shape().1;
    let dh = d / p.heads;
    let keys = patches.matmul(b[p.wk]);
    let values = patches.matmul(b[p.wv]);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(p.heads);
    let mut logits = Vec::with_capacity(p.heads);
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let (qh, kh, vh) = if p.heads == 1 {
            (prompts, keys, values)
        } else {
            (
                prompts.slice_cols(h * dh, dh),
                keys.slice_cols(h * dh, dh),
                values.slice_cols(h * dh, dh),
            )
        };
        let aff = qh.matmul(kh.t()).scale(scale);
        let attn = aff.softmax_rows();
        weights.push(attn.value());
        outs.push(drop.apply(attn).matmul(vh));
        logits.push(aff);
    }
    let tape = prompts.tape();
    let (out, affinity) = if p.heads == 1 {
        (outs[0], logits[0])
    } else {
        (tape.concat_cols(&outs), tape.sum(&logits).scale(1.0 / p.heads as f64))
    };
    Ok(SpatialAttention { out, affinity, weights })
}

/// Semantic-aware attention: standard MHA with prompts as queries.
pub fn semantic_attention<'t>(
    p: &MhaParams,
    b: &Bound<'t>,
    prompts: Var<'t>,
    patches: Var<'t>,
    drop: &mut Dropout,
) -> Result<Attention<'t>> {
    multi_head_attention(p, b, prompts, patches, drop)
}

/// Attention loss: cross-entropy between `softmax_HW(M_pᵀ)` and
/// `softmax_HW(affinity)`, averaged over parts.
pub fn attention_loss_var<'t>(affinity: Var<'t>, labels: &PatchLabels) -> Result<Var<'t>> {
    attention_loss_tempered_var(affinity, labels, 1.0)
}

/// As [`attention_loss_var`] with the target taken as `softmax_HW(M_pᵀ / t)`.
/// `t = 1` is the plain form; small `t` approaches the mask normalised over
/// its support.
pub fn attention_loss_tempered_var<'t>(affinity: Var<'t>, labels: &PatchLabels, t: f64) -> Result<Var<'t>> {
    if !(t > 0.0) {
        return Err(ProfdError::InvalidInput(format!(
            "attention target temperature {t} must be > 0"
        )));
    }
    let lt = labels.labels.t().as_standard_layout().into_owned();
    if affinity.shape() != lt.dim() {
        return Err(ProfdError::DimensionMismatch(format!(
            "affinity {:?} vs transposed patch labels {:?}",
            affinity.shape(),
            lt.dim()
        )));
    }
    let n = lt.nrows() as f64;
    let target = affinity.tape().constant(softmax_rows(&(lt / t)));
    Ok(affinity.log_softmax_rows().mul(target).sum_all().scale(-1.0 / n))
}

pub fn attention_loss(affinity: &Mat, labels: &PatchLabels) -> Result<f64> {
    let tape = Tape::new();
    Ok(attention_loss_var(tape.constant(affinity.clone()), labels)?.item())
}

/// Which blocks' spatial affinities the attention loss reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttnBlocks {
    #[default]
    First,
    All,
    Last,
}

impl AttnBlocks {
    pub fn select<T: Copy>(self, per_block: &[T]) -> Vec<T> {
        match self {
            AttnBlocks::First => per_block.first().copied().into_iter().collect(),
            AttnBlocks::Last => per_block.last().copied().into_iter().collect(),
            AttnBlocks::All => per_block.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HybridBlock {
    pub ln_rev_pat: LayerNorm,
    pub ln_rev_pro: LayerNorm,
    pub rev: MhaParams,
    pub ln_q: LayerNorm,
    pub ln_kv: LayerNorm,
    pub spa: SpatialParams,
    pub sea: MhaParams,
    pub ln_fuse_q: LayerNorm,
    pub ln_fuse_kv: LayerNorm,
    pub fuse: MhaParams,
    pub ln_ffn: LayerNorm,
    pub ffn: FfnParams,
}

/// Per-block intermediate results.
pub struct BlockOutput<'t> {
    pub prompts: Var<'t>,
    pub patches: Var<'t>,
    pub affinity: Option<Var<'t>>,
    /// Softmaxed part-to-patch map `[N × HW]` for inspection.
    pub attn_map: Mat,
}

/// Reverse cross-attention with its residual: `E_pat + MHA(LN(E_pat), LN(E_pro))`.
pub fn reverse_cross_attention<'t>(
    blk: &HybridBlock,
    b: &Bound<'t>,
    patches: Var<'t>,
    prompts: Var<'t>,
    drop: &mut Dropout,
) -> Result<Attention<'t>> {
    let q = blk.ln_rev_pat.forward(b, patches);
    let kv = blk.ln_rev_pro.forward(b, prompts);
    let att = multi_head_attention(&blk.rev, b, q, kv, drop)?;
    Ok(Attention {
        out: patches.add(att.out),
        weights: att.weights,
    })
}

pub fn feed_forward<'t>(p: &FfnParams, b: &Bound<'t>, x: Var<'t>, drop: &mut Dropout) -> Var<'t> {
    let h = p.fc1.forward(b, x).gelu();
    p.fc2.forward(b, drop.apply(h))
}

impl HybridBlock {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, cfg: &DecoderConfig) -> Self {
        let hidden = d * cfg.ffn_mult;
        HybridBlock {
            ln_rev_pat: LayerNorm::new(store, &format!("{name}.ln_rev_pat"), d),
            ln_rev_pro: LayerNorm::new(store, &format!("{name}.ln_rev_pro"), d),
            rev: MhaParams::new(store, rng, &format!("{name}.rev"), d, cfg.heads),
            ln_q: LayerNorm::new(store, &format!("{name}.ln_q"), d),
            ln_kv: LayerNorm::new(store, &format!("{name}.ln_kv"), d),
            spa: SpatialParams {
                wk: store.add(format!("{name}.spa.wk"), xavier_uniform(rng, d, d)),
                wv: store.add(format!("{name}.spa.wv"), xavier_uniform(rng, d, d)),
                heads: cfg.spa_heads,
            },
            sea: MhaParams::new(store, rng, &format!("{name}.sea"), d, cfg.heads),
            ln_fuse_q: LayerNorm::new(store, &format!("{name}.ln_fuse_q"), d),
            ln_fuse_kv: LayerNorm::new(store, &format!("{name}.ln_fuse_kv"), d),
            fuse: MhaParams::new(store, rng, &format!("{name}.fuse"), d, cfg.heads),
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), d),
            ffn: FfnParams {
                fc1: Linear::new(store, rng, &format!("{name}.ffn.fc1"), d, hidden, true),
                fc2: Linear::new(store, rng, &format!("{name}.ffn.fc2"), hidden, d, true),
            },
        }
    }

    pub fn forward<'t>(
        &self,
        cfg: &DecoderConfig,
        b: &Bound<'t>,
        prompts: Var<'t>,
        patches: Var<'t>,
        drop: &mut Dropout,
    ) -> Result<BlockOutput<'t>> {
        let patches_new = reverse_cross_attention(self, b, patches, prompts, drop)?.out;

        let q = self.ln_q.forward(b, prompts);
        let kv = self.ln_kv.forward(b, patches);
        let mut branches = Vec::with_capacity(2);
        let mut affinity = None;
        let mut attn_map = None;
        if cfg.spa {
            let s = spatial_attention(&self.spa, b, q, kv, drop)?;
            attn_map = Some(softmax_rows(&s.affinity.value()));
            affinity = Some(s.affinity);
            branches.push(s.out);
        }
        if cfg.sea {
            let s = semantic_attention(&self.sea, b, q, kv, drop)?;
            if attn_map.is_none() {
                attn_map = Some(mean_of(&s.weights));
            }
            branches.push(s.out);
        }
        let hybrid = prompts.add(prompts.tape().sum(&branches));

        let fq = self.ln_fuse_q.forward(b, hybrid);
        let fkv = self.ln_fuse_kv.forward(b, patches_new);
        let fused = hybrid.add(multi_head_attention(&self.fuse, b, fq, fkv, drop)?.out);
        let out = fused.add(feed_forward(&self.ffn, b, self.ln_ffn.forward(b, fused), drop));
        Ok(BlockOutput {
            prompts: out,
            patches: patches_new,
            affinity,
            attn_map: attn_map.expect("validated: one branch is on"),
        })
    }
}

fn mean_of(ms: &[Mat]) -> Mat {
    let mut acc = ms[0].clone();
    for m in &ms[1..] {
        acc += m;
    }
    acc / ms.len() as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HybridDecoder {
    pub cfg: DecoderConfig,
    pub blocks: Vec<HybridBlock>,
}

pub struct Decoded<'t> {
    /// Part features `F_p`, `[N × d]`.
    pub parts: Var<'t>,
    /// Spatial-branch affinity of every block (empty when the branch is off).
    pub affinities: Vec<Var<'t>>,
    pub attn_maps: Vec<Mat>,
}

impl HybridDecoder {
    pub fn new(store: &mut ParamStore, cfg: DecoderConfig, d: usize, seed: u64) -> Result<Self> {
        cfg.validate(d)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdec0_de00);
        let blocks = (0..cfg.layers)
            .map(|l| HybridBlock::new(store, &mut rng, &format!("decoder.{l}"), d, &cfg))
            .collect();
        Ok(HybridDecoder { cfg, blocks })
    }

    pub fn decode<'t>(
        &self,
        b: &Bound<'t>,
        prompts: Var<'t>,
        patches: Var<'t>,
        drop: &mut Dropout,
    ) -> Result<Decoded<'t>> {
        check_width(prompts, patches, "hybrid decoder")?;
        let mut pro = prompts;
        let mut pat = patches;
        let mut affinities = Vec::new();
        let mut attn_maps = Vec::new();
        for blk in &self.blocks {
            let o = blk.forward(&self.cfg, b, pro, pat, drop)?;
            pro = o.prompts;
            pat = o.patches;
            affinities.extend(o.affinity);
            attn_maps.push(o.attn_map);
        }
        Ok(Decoded {
            parts: pro,
            affinities,
            attn_maps,
        })
    }
}

/// Row-major concatenation `[f_1; …; f_N]` as a `1 × N·d` row.
pub fn concat_parts(parts: Var<'_>) -> Var<'_> {
    let (n, d) = parts.shape();
    parts.reshape(1, n * d)
}

pub struct DiversityLoss<'t> {
    pub loss: Var<'t>,
    /// Parts whose feature vector had zero norm (their cosines count as 0).
    pub zero_norm_parts: Vec<usize>,
    /// Set when `N < 2` and the loss is identically 0.
    pub too_few_parts: bool,
}

const DIV_EPS: f64 = 1e-12;

/// `1/(N(N−1)) Σ_{i<j} |cos(f_i, f_j)|`.
pub fn diversity_loss_var(parts: Var<'_>) -> DiversityLoss<'_> {
    let tape = parts.tape();
    let (n, _) = parts.shape();
    let value = parts.value();
    let zero_norm_parts: Vec<usize> = value
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.dot(r).sqrt() < DIV_EPS)
        .map(|(i, _)| i)
        .collect();
    if !zero_norm_parts.is_empty() {
        warn!("diversity loss: zero-norm part features {zero_norm_parts:?}");
    }
    if n < 2 {
        warn!("diversity loss needs at least two parts; returning 0");
        return DiversityLoss {
            loss: parts.mul(tape.constant(Mat::zeros(parts.shape()))).sum_all(),
            zero_norm_parts,
            too_few_parts: true,
        };
    }
    let unit = parts.normalize_rows(DIV_EPS);
    let upper = Mat::from_shape_fn((n, n), |(i, j)| if i < j { 1.0 } else { 0.0 });
    let loss = unit
        .matmul(unit.t())
        .abs()
        .mul(tape.constant(upper))
        .sum_all()
        .scale(1.0 / (n * (n - 1)) as f64);
    DiversityLoss {
        loss,
        zero_norm_parts,
        too_few_parts: false,
    }
}

pub fn diversity_loss(parts: &Mat) -> f64 {
    let tape = Tape::new();
    diversity_loss_var(tape.constant(parts.clone())).loss.item()
}
