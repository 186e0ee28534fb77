//! Interfaces to the language model, the image-text matcher, and the VQA
//! model whose attention is translated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::AttentionStack;
use crate::saliency::Image;

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub id: TokenId,
    pub surface: String,
}

impl Token {
    /// Sentence boundary test, on the surface form so tokenizers that glue
    /// the period onto a word are handled.
    pub fn ends_sentence(&self) -> bool {
        self.surface.contains('.')
    }
}

/// Leading part of a next-token distribution, sorted by probability
/// (descending). Probabilities are over the full vocabulary.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenDist {
    pub entries: Vec<(Token, f64)>,
}

impl TokenDist {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }
}

pub trait LanguageModelBackend: Send + Sync {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>>;

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String>;

    /// The `top_k` most likely next tokens; `top_k` beyond the vocabulary
    /// returns everything.
    fn next_dist(&self, tokens: &[TokenId], top_k: usize) -> Result<TokenDist>;

    /// Samples a continuation of `tokens` from the top-p nucleus until a
    /// token containing "." (kept), end of sequence (dropped), or `max_len`
    /// tokens. Deterministic given `seed`.
    fn continue_sentence(
        &self,
        tokens: &[TokenId],
        top_p: f64,
        max_len: usize,
        seed: u64,
    ) -> Result<Vec<TokenId>> {
        sample_continuation(self, tokens, top_p, max_len, seed)
    }

    fn eos(&self) -> Option<TokenId> {
        None
    }
}

pub trait MatcherBackend: Send + Sync {
    /// Cosine similarity in [-1, 1] between the image and each sentence.
    fn cosine_scores(&self, image: &Image, sentences: &[String]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqaOutput {
    pub answer: String,
    pub stack: AttentionStack<f64>,
}

pub trait VqaBackend: Send + Sync {
    fn infer(&self, image: &Image, question: &str) -> Result<VqaOutput>;
}

/// Smallest prefix of `dist` whose cumulative probability exceeds `top_p`
/// (the whole list if it never does). Zero-probability tail is dropped.
pub fn nucleus(dist: &TokenDist, top_p: f64) -> &[(Token, f64)] {
    let mut mass = 0.0;
    let mut end = 0;
    for (i, (_, p)) in dist.entries.iter().enumerate() {
        if *p <= 0.0 {
            break;
        }
        mass += p;
        end = i + 1;
        if mass > top_p {
            break;
        }
    }
    &dist.entries[..end]
}

/// Draws from a nucleus at temperature 1 (probabilities renormalized over
/// the kept tokens).
pub fn sample_from<'a, R: Rng>(kept: &'a [(Token, f64)], rng: &mut R) -> Option<&'a Token> {
    let mass: f64 = kept.iter().map(|(_, p)| p).sum();
    if kept.is_empty() || mass <= 0.0 {
        return None;
    }
    let mut u = rng.gen::<f64>() * mass;
    for (tok, p) in kept {
        if u < *p {
            return Some(tok);
        }
        u -= p;
    }
    kept.last().map(|(t, _)| t)
}

/// Nucleus-sampling continuation built on `next_dist`.
pub fn sample_continuation<L: LanguageModelBackend + ?Sized>(
    lm: &L,
    tokens: &[TokenId],
    top_p: f64,
    max_len: usize,
    seed: u64,
) -> Result<Vec<TokenId>> {
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::invalid(format!("top_p {top_p} outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = tokens.to_vec();
    let mut out = Vec::new();
    let eos = lm.eos();
    while out.len() < max_len {
        let dist = lm.next_dist(&ctx, usize::MAX)?;
        let Some(tok) = sample_from(nucleus(&dist, top_p), &mut rng) else {
            break;
        };
        if Some(tok.id) == eos {
            break;
        }
        out.push(tok.id);
        ctx.push(tok.id);
        if tok.ends_sentence() {
            break;
        }
    }
    Ok(out)
}

/// Per-(step, candidate) seed so continuations do not depend on the order in
/// which candidates are completed.
pub fn derive_seed(base: u64, step: usize, candidate: usize) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(base ^ splitmix(((step as u64) << 32) ^ candidate as u64))
}
