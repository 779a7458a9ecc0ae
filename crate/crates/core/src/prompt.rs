//! Part-specific prompts: `M` shared learnable prefix tokens followed by
//! the tokenised body-part name, encoded by the frozen text backbone.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Mat, Tape, Var};
use crate::encoder::{EncoderHandle, TextBackbone, Token};
use crate::error::{ProfdError, Result};
use crate::params::{gaussian, Bound, ParamId, ParamStore};

pub const DEFAULT_PARTS: [&str; 5] = ["head", "upper arms and torso", "lower arms and torso", "legs", "feet"];

pub const PREFIX_INIT_STD: f64 = 0.02;

/// Token sequences `[Prefix(0), …, Prefix(M-1), words(name)…]`, one per part.
/// The prefix slots refer to the same shared rows in every sequence.
pub fn build_part_prompts(part_names: &[String], m_prefix: usize, text: &dyn TextBackbone) -> Result<Vec<Vec<Token>>> {
    if part_names.is_empty() {
        return Err(ProfdError::InvalidInput("part name list is empty".into()));
    }
    let mut seen = HashSet::new();
    for name in part_names {
        if !seen.insert(name.as_str()) {
            return Err(ProfdError::InvalidInput(format!("duplicate part name `{name}`")));
        }
    }
    part_names
        .iter()
        .map(|name| {
            let words = text.tokenize(name);
            if words.is_empty() {
                return Err(ProfdError::InvalidInput(format!("part name `{name}` has no tokens")));
            }
            Ok((0..m_prefix)
                .map(Token::Prefix)
                .chain(words.into_iter().map(Token::Word))
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PromptBank {
    pub part_names: Vec<String>,
    pub m_prefix: usize,
    /// `[M × token_width]`, absent when `M = 0`.
    pub prefix: Option<ParamId>,
    pub sequences: Vec<Vec<Token>>,
    cached: Option<Mat>,
}

impl PromptBank {
    pub fn new(
        store: &mut ParamStore,
        enc: &EncoderHandle,
        part_names: &[String],
        m_prefix: usize,
        seed: u64,
    ) -> Result<Self> {
        let sequences = build_part_prompts(part_names, m_prefix, enc.text.as_ref())?;
        let prefix = (m_prefix > 0).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e0f_1c5e);
            store.add(
                "prompt.prefix",
                gaussian(&mut rng, m_prefix, enc.text.token_width(), PREFIX_INIT_STD),
            )
        });
        Ok(PromptBank {
            part_names: part_names.to_vec(),
            m_prefix,
            prefix,
            sequences,
            cached: None,
        })
    }

    pub fn n_parts(&self) -> usize {
        self.part_names.len()
    }

    /// `[N × d]` prompt embeddings on the tape; differentiable w.r.t. the prefix only.
    pub fn embeddings<'t>(&self, tape: &'t Tape, p: &Bound<'t>, enc: &EncoderHandle) -> Result<Var<'t>> {
        enc.encode_text(tape, &self.sequences, self.prefix.map(|id| p[id]))
    }

    /// Plain embeddings; served from the eval cache when one is present.
    pub fn embeddings_eval(&self, store: &ParamStore, enc: &EncoderHandle) -> Result<Mat> {
        if let Some(c) = &self.cached {
            return Ok(c.clone());
        }
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        Ok(self.embeddings(&tape, &p, enc)?.value())
    }

    /// Freezes the current embeddings for inference.
    pub fn cache_for_eval(&mut self, store: &ParamStore, enc: &EncoderHandle) -> Result<()> {
        self.cached = None;
        self.cached = Some(self.embeddings_eval(store, enc)?);
        Ok(())
    }

    /// Drops the eval cache (training mode: prompts are re-encoded every pass).
    pub fn clear_cache(&mut self) {
        self.cached = None;
    }

    pub fn is_cached(&self) -> bool {
        self.cached.is_some()
    }
}
