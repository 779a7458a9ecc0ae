//! Image and text encoders.
//!
//! The backbones are frozen and pluggable through [`ImageBackbone`] and
//! [`TextBackbone`]. The only trainable piece owned here is the linear
//! projection from the image backbone's native width to the shared width
//! `d`. Patch tokens and the global vector are L2-normalised after it.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape, Var};
use crate::dims::Dims;
use crate::error::{ProfdError, Result};
use crate::params::{gaussian, xavier_uniform, Bound, ParamId, ParamStore};

pub const NORM_EPS: f64 = 1e-12;

/// RGB image, row-major `h × w × 3`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w * 3 {
            return Err(ProfdError::DimensionMismatch(format!(
                "image buffer has {} values, expected {}x{}x3",
                data.len(),
                h,
                w
            )));
        }
        Ok(Image { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Image {
            h,
            w,
            data: vec![0.0; h * w * 3],
        }
    }

    #[inline]
    pub fn px(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.w + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.w + x) * 3 + c] = v;
    }
}

/// Output of the image encoder: `[grid_h·grid_w × d]` patch tokens in
/// row-major grid order and a `[1 × d]` global vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub patches: Mat,
    pub global: Mat,
}

impl FeatureMap {
    pub fn width(&self) -> usize {
        self.global.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.patches.iter().chain(self.global.iter()).all(|v| v.is_finite())
    }
}

/// Tape-side counterpart of [`FeatureMap`].
#[derive(Debug, Clone, Copy)]
pub struct FeatureVars<'t> {
    pub patches: Var<'t>,
    pub global: Var<'t>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    PretrainedVl,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub seed: u64,
    /// Width of the image backbone's tokens before projection.
    pub native_width: usize,
    /// Width of text token embeddings (and the learnable prefix tokens).
    pub text_width: usize,
    pub context_len: usize,
    pub vocab_size: u32,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Stub,
            seed: 0,
            native_width: 768,
            text_width: 512,
            context_len: 77,
            vocab_size: 49408,
        }
    }
}

/// Frozen vision backbone.
pub trait ImageBackbone: Send + Sync {
    fn native_width(&self) -> usize;

    /// Returns `[n_patches × native]` tokens and a `[1 × native]` global token.
    fn encode(&self, image: &Image, dims: &Dims) -> Result<(Mat, Mat)>;
}

/// Frozen text backbone. `encode` must be built from tape operations so
/// gradient can reach learnable input embeddings; its own weights enter
/// the tape as constants only.
pub trait TextBackbone: Send + Sync {
    fn token_width(&self) -> usize;
    fn output_width(&self) -> usize;
    fn context_len(&self) -> usize;
    fn tokenize(&self, text: &str) -> Vec<u32>;
    /// `[tokens.len() × token_width]` embedding rows.
    fn embed_tokens(&self, tokens: &[u32]) -> Mat;
    /// `[L × token_width]` sequence to a `[1 × output_width]` vector.
    fn encode<'t>(&self, tape: &'t Tape, seq: Var<'t>) -> Var<'t>;
    fn frozen_weights(&self) -> Vec<&Mat>;
}

/// Pixel blocks of every patch, `[n_patches × patch·patch·3]`.
pub fn unfold_patches(image: &Image, dims: &Dims) -> Mat {
    let p = dims.patch;
    let (gh, gw) = (dims.grid_h(), dims.grid_w());
    let mut out = Mat::zeros((gh * gw, p * p * 3));
    for i in 0..gh {
        for j in 0..gw {
            let (y0, x0) = dims.patch_origin(i, j);
            let mut row = out.row_mut(i * gw + j);
            let mut k = 0;
            for y in y0..y0 + p {
                let base = (y * image.w + x0) * 3;
                for v in &image.data[base..base + p * 3] {
                    row[k] = *v as f64;
                    k += 1;
                }
            }
        }
    }
    out
}

/// Fixed random patch features `tanh(2(x − ½)·E + b + pos)`; the global token
/// is the mean of the patch tokens. `pos` is a random Fourier encoding of the
/// patch centre in `[0,1]²`, so tokens know where they sit at any grid size.
pub struct StubImageBackbone {
    embed: Mat,
    bias: Mat,
    /// `[3 × width]`: vertical frequency, horizontal frequency, phase.
    pos: Mat,
    patch: usize,
}

pub const POS_FREQ_STD: f64 = 4.0;

impl StubImageBackbone {
    pub fn new(seed: u64, patch: usize, native_width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a6e_0000);
        let fan_in = patch * patch * 3;
        let embed = gaussian(&mut rng, fan_in, native_width, 1.0 / (fan_in as f64).sqrt());
        let bias = gaussian(&mut rng, 1, native_width, 0.5);
        let mut pos = gaussian(&mut rng, 3, native_width, POS_FREQ_STD);
        pos.row_mut(2).mapv_inplace(|v| v * std::f64::consts::PI);
        StubImageBackbone {
            embed,
            bias,
            pos,
            patch,
        }
    }

    pub fn weights(&self) -> &Mat {
        &self.embed
    }

    fn position(&self, dims: &Dims) -> Mat {
        let (gh, gw) = (dims.grid_h(), dims.grid_w());
        let half = dims.patch as f64 / 2.0;
        let mut out = Mat::zeros((gh * gw, self.pos.ncols()));
        for i in 0..gh {
            for j in 0..gw {
                let (y0, x0) = dims.patch_origin(i, j);
                let cy = (y0 as f64 + half) / dims.img_h as f64;
                let cx = (x0 as f64 + half) / dims.img_w as f64;
                let mut row = out.row_mut(i * gw + j);
                for (k, v) in row.iter_mut().enumerate() {
                    *v = (cy * self.pos[[0, k]] + cx * self.pos[[1, k]] + self.pos[[2, k]]).sin();
                }
            }
        }
        out
    }
}

impl ImageBackbone for StubImageBackbone {
    fn native_width(&self) -> usize {
        self.embed.ncols()
    }

    fn encode(&self, image: &Image, dims: &Dims) -> Result<(Mat, Mat)> {
        if dims.patch != self.patch {
            return Err(ProfdError::DimensionMismatch(format!(
                "backbone patch {} vs dims patch {}",
                self.patch, dims.patch
            )));
        }
        let centred = unfold_patches(image, dims).mapv(|v| 2.0 * (v - 0.5));
        let tokens = (centred.dot(&self.embed) + &self.bias + self.position(dims)).mapv(f64::tanh);
        let global = tokens
            .mean_axis(ndarray::Axis(0))
            .expect("at least one patch")
            .insert_axis(ndarray::Axis(0));
        Ok((tokens, global))
    }
}

/// Small frozen text encoder: token embedding plus position, one tanh
/// layer, mean pooling over positions and a projection to `d`.
pub struct StubTextEncoder {
    seed: u64,
    vocab: u32,
    pos: Mat,
    w1: Mat,
    b1: Mat,
    w2: Mat,
}

impl StubTextEncoder {
    pub fn new(seed: u64, width: usize, out_width: usize, context_len: usize, vocab: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e47_0000);
        StubTextEncoder {
            seed,
            vocab,
            pos: gaussian(&mut rng, context_len, width, 0.1),
            w1: gaussian(&mut rng, width, width, 1.0 / (width as f64).sqrt()),
            b1: gaussian(&mut rng, 1, width, 0.1),
            w2: xavier_uniform(&mut rng, width, out_width),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl TextBackbone for StubTextEncoder {
    fn token_width(&self) -> usize {
        self.w1.nrows()
    }

    fn output_width(&self) -> usize {
        self.w2.ncols()
    }

    fn context_len(&self) -> usize {
        self.pos.nrows()
    }

    fn tokenize(&self, text: &str) -> Vec<u32> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| (fnv1a(w.to_lowercase().as_bytes()) % self.vocab as u64) as u32)
            .collect()
    }

    fn embed_tokens(&self, tokens: &[u32]) -> Mat {
        let width = self.token_width();
        let mut out = Mat::zeros((tokens.len(), width));
        for (r, tok) in tokens.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9e37_79b9) ^ *tok as u64);
            out.row_mut(r).assign(&gaussian(&mut rng, 1, width, 1.0).row(0));
        }
        out
    }

    fn encode<'t>(&self, tape: &'t Tape, seq: Var<'t>) -> Var<'t> {
        let len = seq.shape().0;
        let pos = tape.constant(self.pos.slice(ndarray::s![..len, ..]).to_owned());
        let w1 = tape.constant(self.w1.clone());
        let b1 = tape.constant(self.b1.clone());
        let w2 = tape.constant(self.w2.clone());
        seq.add(pos).matmul(w1).add_row(b1).tanh().mean_cols().matmul(w2)
    }

    fn frozen_weights(&self) -> Vec<&Mat> {
        vec![&self.pos, &self.w1, &self.b1, &self.w2]
    }
}

/// A token of a prompt: either a shared learnable prefix slot or a word id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Token {
    Prefix(usize),
    Word(u32),
}

/// Frozen backbones plus the trainable image projection.
#[derive(Clone)]
pub struct EncoderHandle {
    pub config: EncoderConfig,
    pub image: Arc<dyn ImageBackbone>,
    pub text: Arc<dyn TextBackbone>,
    pub proj: ParamId,
}

impl std::fmt::Debug for EncoderHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EncoderHandle")
            .field("config", &self.config)
            .field("proj", &self.proj)
            .finish()
    }
}

impl EncoderHandle {
    /// Builds the encoder described by `config`, registering the projection
    /// in `store`.
    pub fn from_config(config: &EncoderConfig, dims: &Dims, store: &mut ParamStore) -> Result<Self> {
        match config.kind {
            EncoderKind::Stub => {
                let image = Arc::new(StubImageBackbone::new(config.seed, dims.patch, config.native_width));
                let text = Arc::new(StubTextEncoder::new(
                    config.seed,
                    config.text_width,
                    dims.d,
                    config.context_len,
                    config.vocab_size,
                ));
                Ok(Self::with_backbones(config.clone(), image, text, dims, store))
            }
            EncoderKind::PretrainedVl => Err(ProfdError::EncoderFailure(
                "no pretrained vision-language backbone is bundled; construct one with \
                 EncoderHandle::with_backbones or use kind = \"stub\""
                    .into(),
            )),
        }
    }

    pub fn with_backbones(
        config: EncoderConfig,
        image: Arc<dyn ImageBackbone>,
        text: Arc<dyn TextBackbone>,
        dims: &Dims,
        store: &mut ParamStore,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9f0e_0000);
        let native = image.native_width();
        let proj = store.add(
            "encoder.proj",
            gaussian(&mut rng, native, dims.d, 1.0 / (native as f64).sqrt()),
        );
        EncoderHandle {
            config,
            image,
            text,
            proj,
        }
    }

    fn check_image(image: &Image, dims: &Dims) -> Result<()> {
        if image.h != dims.img_h || image.w != dims.img_w {
            return Err(ProfdError::DimensionMismatch(format!(
                "image is {}x{}, dims expect {}x{}",
                image.h, image.w, dims.img_h, dims.img_w
            )));
        }
        if let Some(v) = image.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ProfdError::InvalidInput(format!("pixel value {v} outside [0,1]")));
        }
        Ok(())
    }

    /// Frozen backbone tokens for a batch, stacked: `([B·HW × native], [B × native])`.
    pub fn backbone_tokens(&self, images: &[&Image], dims: &Dims) -> Result<(Mat, Mat)> {
        let mut toks = Vec::with_capacity(images.len());
        let mut globals = Vec::with_capacity(images.len());
        for img in images {
            Self::check_image(img, dims)?;
            let (t, g) = self.image.encode(img, dims)?;
            if t.nrows() != dims.n_patches() {
                return Err(ProfdError::DimensionMismatch(format!(
                    "backbone produced {} tokens, grid has {}",
                    t.nrows(),
                    dims.n_patches()
                )));
            }
            toks.push(t);
            globals.push(g);
        }
        let tv: Vec<_> = toks.iter().map(|t| t.view()).collect();
        let gv: Vec<_> = globals.iter().map(|t| t.view()).collect();
        Ok((
            ndarray::concatenate(ndarray::Axis(0), &tv).expect("same width"),
            ndarray::concatenate(ndarray::Axis(0), &gv).expect("same width"),
        ))
    }

    /// Projects and normalises a batch on the tape.
    pub fn encode_images<'t>(
        &self,
        tape: &'t Tape,
        p: &Bound<'t>,
        images: &[&Image],
        dims: &Dims,
    ) -> Result<Vec<FeatureVars<'t>>> {
        let (tokens, globals) = self.backbone_tokens(images, dims)?;
        self.project(tape, p, tokens, globals, dims)
    }

    /// Projection half of [`Self::encode_images`] for precomputed backbone tokens.
    pub fn project<'t>(
        &self,
        tape: &'t Tape,
        p: &Bound<'t>,
        tokens: Mat,
        globals: Mat,
        dims: &Dims,
    ) -> Result<Vec<FeatureVars<'t>>> {
        let hw = dims.n_patches();
        let b = globals.nrows();
        let proj = p[self.proj];
        let patches = tape.constant(tokens).matmul(proj).normalize_rows(NORM_EPS);
        let global = tape.constant(globals).matmul(proj).normalize_rows(NORM_EPS);
        if patches
            .value()
            .iter()
            .chain(global.value().iter())
            .any(|v| !v.is_finite())
        {
            return Err(ProfdError::EncoderFailure("non-finite encoder output".into()));
        }
        Ok((0..b)
            .map(|i| FeatureVars {
                patches: patches.slice_rows(i * hw, hw),
                global: global.slice_rows(i, 1),
            })
            .collect())
    }

    /// Plain (no-gradient) image encoding.
    pub fn encode_image(&self, store: &ParamStore, image: &Image, dims: &Dims) -> Result<FeatureMap> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let fv = self.encode_images(&tape, &p, &[image], dims)?[0];
        Ok(FeatureMap {
            grid_h: dims.grid_h(),
            grid_w: dims.grid_w(),
            patches: fv.patches.value(),
            global: fv.global.value(),
        })
    }

    /// Encodes prompt token sequences to an `[N × d]` row-normalised matrix.
    /// `prefix` supplies the rows referenced by [`Token::Prefix`].
    pub fn encode_text<'t>(
        &self,
        tape: &'t Tape,
        sequences: &[Vec<Token>],
        prefix: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        if sequences.is_empty() {
            return Err(ProfdError::InvalidInput("no token sequences to encode".into()));
        }
        let ctx = self.text.context_len();
        let mut rows = Vec::with_capacity(sequences.len());
        for seq in sequences {
            if seq.is_empty() || seq.len() > ctx {
                return Err(ProfdError::InvalidInput(format!(
                    "token sequence length {} outside 1..={ctx}",
                    seq.len()
                )));
            }
            let mut pieces = Vec::with_capacity(seq.len());
            for tok in seq {
                pieces.push(match *tok {
                    Token::Prefix(k) => prefix
                        .ok_or_else(|| ProfdError::InvalidInput("prefix token without prefix".into()))?
                        .slice_rows(k, 1),
                    Token::Word(id) => tape.constant(self.text.embed_tokens(&[id])),
                });
            }
            let x = tape.concat_rows(&pieces);
            rows.push(self.text.encode(tape, x));
        }
        let out = tape.concat_rows(&rows).normalize_rows(NORM_EPS);
        if out.value().iter().any(|v| !v.is_finite()) {
            return Err(ProfdError::EncoderFailure("non-finite text embedding".into()));
        }
        Ok(out)
    }
}
