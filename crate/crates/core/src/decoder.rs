//! Visually guided decoding.
//!
//! Each step takes the language model's top-k next tokens, completes every
//! candidate into a sentence, scores the sentences against the
//! attention-masked image, and picks the token maximizing
//! `p_lm + beta * softmax(kappa * cosine)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{
    derive_seed, LanguageModelBackend, MatcherBackend, Token, TokenId, VqaBackend,
};
use crate::error::{Error, Result};
use crate::prompt::{render_n_shot, InContextExample, NShotStyle, PromptTemplate};
use crate::rollout::rollout;
use crate::saliency::{apply_mask, patch_mask, saliency, threshold_mask, Image, MaskedImage};
use crate::scalar::Scalar;

/// Decoding hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidingConfig {
    /// Candidates per step.
    pub k: usize,
    /// Nucleus mass for continuations.
    pub top_p: f64,
    /// Softmax temperature on match scores.
    pub kappa: f64,
    /// Weight of the match term.
    pub beta: f64,
    /// Saliency threshold.
    pub tau: f64,
    pub max_tokens: usize,
    pub max_continuation_tokens: usize,
    pub seed: u64,
    /// Renormalize LM probabilities over the k candidates before mixing.
    pub renormalize_lm_probs: bool,
}

impl Default for GuidingConfig {
    fn default() -> Self {
        Self {
            k: 45,
            top_p: 0.15,
            kappa: 100.0,
            beta: 0.7,
            tau: 200.0 / 256.0,
            max_tokens: 64,
            max_continuation_tokens: 32,
            seed: 0,
            renormalize_lm_probs: false,
        }
    }
}

impl GuidingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("guiding config: {what}")));
        if self.k == 0 {
            return bad("k must be positive");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad("kappa must be positive");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must be in [0, 1]");
        }
        if self.max_tokens == 0 || self.max_continuation_tokens == 0 {
            return bad("token limits must be positive");
        }
        Ok(())
    }
}

/// Top-k next tokens with their raw probabilities. Tokens the model gives
/// zero probability are not proposed.
pub fn propose(
    lm: &dyn LanguageModelBackend,
    context: &[TokenId],
    k: usize,
) -> Result<Vec<(Token, f64)>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let dist = lm.next_dist(context, k)?;
    Ok(dist
        .entries
        .into_iter()
        .take(k)
        .filter(|(_, p)| *p > 0.0)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: Token,
    pub lm_prob: f64,
    pub continuation: Vec<TokenId>,
    /// Generated tokens + candidate + continuation, without the prompt.
    pub sentence: String,
    /// Cosine similarity to the masked image, filled in after scoring.
    pub match_score: f64,
    /// Continuation stopped at the length limit instead of a period.
    pub truncated: bool,
}

/// Completes one candidate into a sentence by sampling a continuation.
/// `context` is the prompt followed by the generated tokens; `generated`
/// are the generated tokens alone.
#[allow(clippy::too_many_arguments)]
pub fn complete(
    lm: &dyn LanguageModelBackend,
    context: &[TokenId],
    generated: &[TokenId],
    candidate: Token,
    lm_prob: f64,
    cfg: &GuidingConfig,
    step: usize,
    index: usize,
) -> Result<Candidate> {
    let is_eos = Some(candidate.id) == lm.eos();
    let continuation = if candidate.ends_sentence() || is_eos {
        Vec::new()
    } else {
        let mut ctx = context.to_vec();
        ctx.push(candidate.id);
        let seed = derive_seed(cfg.seed, step, index);
        lm.continue_sentence(&ctx, cfg.top_p, cfg.max_continuation_tokens, seed)?
    };
    let mut sentence_tokens = generated.to_vec();
    if !is_eos {
        sentence_tokens.push(candidate.id);
    }
    sentence_tokens.extend_from_slice(&continuation);
    let sentence = lm.detokenize(&sentence_tokens)?;
    let ended =
        candidate.ends_sentence() || is_eos || continuation.len() < cfg.max_continuation_tokens;
    let truncated = !ended && !sentence.trim_end().ends_with('.');
    Ok(Candidate {
        token: candidate,
        lm_prob,
        continuation,
        sentence,
        match_score: 0.0,
        truncated,
    })
}

/// Softmax of `kappa * cosines`, computed with max subtraction.
pub fn softmax_scaled<T: Scalar>(cosines: &[T], kappa: T) -> Vec<T> {
    let Some(max) = cosines.iter().map(|&c| kappa * c).reduce(T::max) else {
        return Vec::new();
    };
    let exps: Vec<T> = cosines.iter().map(|&c| (kappa * c - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &e| a + e);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Matching quality of each sentence against the masked image.
pub fn match_quality(
    matcher: &dyn MatcherBackend,
    masked: &MaskedImage,
    sentences: &[String],
    kappa: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let cos = matcher.cosine_scores(masked.image(), sentences)?;
    if cos.len() != sentences.len() {
        return Err(Error::invalid(format!(
            "matcher returned {} scores for {} sentences",
            cos.len(),
            sentences.len()
        )));
    }
    let f = softmax_scaled(&cos, kappa);
    Ok((cos, f))
}

/// `argmax_i lm_probs[i] + beta * f[i]`, lowest index on ties.
pub fn select<T: Scalar>(lm_probs: &[T], f: &[T], beta: T) -> Result<usize> {
    if lm_probs.len() != f.len() || lm_probs.is_empty() {
        return Err(Error::invalid(format!(
            "select needs equal non-empty inputs, got {} and {}",
            lm_probs.len(),
            f.len()
        )));
    }
    let mut best = 0;
    let mut best_score = lm_probs[0] + beta * f[0];
    for (i, (&p, &q)) in lm_probs.iter().zip(f).enumerate().skip(1) {
        let s = p + beta * q;
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    #[serde(flatten)]
    pub candidate: Candidate,
    /// Matching quality after the softmax.
    pub f: f64,
    /// `lm_prob + beta * f` (with the configured probability normalization).
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub chosen: usize,
    pub candidates: Vec<ScoredCandidate>,
}

impl StepRecord {
    pub fn chosen_token(&self) -> &Token {
        &self.candidates[self.chosen].candidate.token
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    Period,
    MaxTokens,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    Predicted,
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationResult {
    pub question: String,
    pub predicted_answer: String,
    pub answer: String,
    pub answer_source: AnswerSource,
    pub prompt: String,
    /// Patch-level mask, row-major.
    pub patch_mask: Vec<bool>,
    pub patch_grid: [usize; 2],
    pub text: String,
    pub tokens: Vec<Token>,
    /// One record per emitted token.
    pub steps: Vec<StepRecord>,
    /// The step that chose end-of-sequence, which is not emitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos_step: Option<StepRecord>,
    pub stop_reason: StopReason,
}

/// How the language-model context is built.
#[derive(Debug, Clone, PartialEq)]
pub enum PromptSpec {
    Template(PromptTemplate),
    NShot {
        examples: Vec<InContextExample>,
        style: NShotStyle,
    },
}

impl Default for PromptSpec {
    fn default() -> Self {
        PromptSpec::Template(PromptTemplate::default_template())
    }
}

impl PromptSpec {
    pub fn render(&self, question: &str, answer: &str) -> String {
        match self {
            PromptSpec::Template(t) => t.render(question, answer),
            PromptSpec::NShot { examples, style } => {
                render_n_shot(examples, question, answer, style)
            }
        }
    }
}

/// Result of the VQA forward pass and masking, computed once per translation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub predicted_answer: String,
    pub patch_mask: Vec<bool>,
    pub patch_grid: (usize, usize),
    pub masked: MaskedImage,
}

pub struct Translator<'a> {
    pub lm: &'a dyn LanguageModelBackend,
    pub matcher: &'a dyn MatcherBackend,
    pub vqa: &'a dyn VqaBackend,
    pub cfg: GuidingConfig,
    pub prompt: PromptSpec,
}

impl<'a> Translator<'a> {
    pub fn new(
        lm: &'a dyn LanguageModelBackend,
        matcher: &'a dyn MatcherBackend,
        vqa: &'a dyn VqaBackend,
        cfg: GuidingConfig,
    ) -> Self {
        Self {
            lm,
            matcher,
            vqa,
            cfg,
            prompt: PromptSpec::default(),
        }
    }

    pub fn with_prompt(mut self, prompt: PromptSpec) -> Self {
        self.prompt = prompt;
        self
    }

    /// VQA inference, rollout, thresholding, and masking.
    pub fn prepare(&self, image: &Image, question: &str) -> Result<Prepared> {
        let out = self
            .vqa
            .infer(image, question)
            .map_err(Error::at("vqa.infer"))?;
        let stack = &out.stack;
        let state = rollout(stack).map_err(Error::at("rollout"))?;
        let sal = saliency(&state, stack).map_err(Error::at("saliency"))?;
        let mask = threshold_mask(&sal, self.cfg.tau, image.width(), image.height())
            .map_err(Error::at("threshold"))?;
        let masked = apply_mask(image, &mask).map_err(Error::at("mask"))?;
        Ok(Prepared {
            predicted_answer: out.answer,
            patch_mask: patch_mask(&sal, self.cfg.tau)?,
            patch_grid: stack.patch_grid,
            masked,
        })
    }

    /// Full translation. `ground_truth` replaces the predicted answer in the
    /// prompt when given.
    pub fn translate(
        &self,
        image: &Image,
        question: &str,
        ground_truth: Option<&str>,
    ) -> Result<TranslationResult> {
        self.cfg.validate()?;
        let prepared = self.prepare(image, question)?;
        let (answer, answer_source) = match ground_truth {
            Some(a) => (a.to_string(), AnswerSource::GroundTruth),
            None => (prepared.predicted_answer.clone(), AnswerSource::Predicted),
        };
        let prompt = self.prompt.render(question, &answer);
        let prompt_tokens = self
            .lm
            .tokenize(&prompt)
            .map_err(Error::at("lm.tokenize"))?;
        let (tokens, steps, eos_step, stop_reason) =
            self.guide(&prepared.masked, &prompt_tokens)?;
        let ids: Vec<TokenId> = tokens.iter().map(|t| t.id).collect();
        let text = self
            .lm
            .detokenize(&ids)
            .map_err(Error::at("lm.detokenize"))?;
        Ok(TranslationResult {
            question: question.to_string(),
            predicted_answer: prepared.predicted_answer,
            answer,
            answer_source,
            prompt,
            patch_mask: prepared.patch_mask,
            patch_grid: [prepared.patch_grid.0, prepared.patch_grid.1],
            text,
            tokens,
            steps,
            eos_step,
            stop_reason,
        })
    }

    /// The decoding loop on an already masked image.
    #[allow(clippy::type_complexity)]
    pub fn guide(
        &self,
        masked: &MaskedImage,
        prompt_tokens: &[TokenId],
    ) -> Result<(Vec<Token>, Vec<StepRecord>, Option<StepRecord>, StopReason)> {
        let cfg = &self.cfg;
        let mut context = prompt_tokens.to_vec();
        let mut generated: Vec<TokenId> = Vec::new();
        let mut tokens = Vec::new();
        let mut steps = Vec::new();

        for step in 0..cfg.max_tokens {
            let proposals = propose(self.lm, &context, cfg.k).map_err(Error::at("lm.next"))?;
            if proposals.is_empty() {
                return Err(Error::at("propose")(Error::invalid(
                    "language model proposed no tokens",
                )));
            }
            let candidates = proposals
                .into_par_iter()
                .enumerate()
                .map(|(i, (tok, p))| complete(self.lm, &context, &generated, tok, p, cfg, step, i))
                .collect::<Result<Vec<_>>>()
                .map_err(Error::at("lm.continue"))?;
            let sentences: Vec<String> = candidates.iter().map(|c| c.sentence.clone()).collect();
            let (cos, f) = match_quality(self.matcher, masked, &sentences, cfg.kappa)
                .map_err(Error::at("match.scores"))?;

            let mut lm_probs: Vec<f64> = candidates.iter().map(|c| c.lm_prob).collect();
            if cfg.renormalize_lm_probs {
                let s: f64 = lm_probs.iter().sum();
                lm_probs.iter_mut().for_each(|p| *p /= s);
            }
            let chosen = select(&lm_probs, &f, cfg.beta)?;
            let record = StepRecord {
                chosen,
                candidates: candidates
                    .into_iter()
                    .zip(cos)
                    .zip(f.iter().zip(&lm_probs))
                    .map(|((mut c, cos), (&f, &p))| {
                        c.match_score = cos;
                        ScoredCandidate {
                            candidate: c,
                            f,
                            combined: p + cfg.beta * f,
                        }
                    })
                    .collect(),
            };
            let token = record.chosen_token().clone();
            if Some(token.id) == self.lm.eos() {
                return Ok((tokens, steps, Some(record), StopReason::Eos));
            }
            context.push(token.id);
            generated.push(token.id);
            steps.push(record);
            let period = token.ends_sentence();
            tokens.push(token);
            if period {
                return Ok((tokens, steps, None, StopReason::Period));
            }
        }
        Ok((tokens, steps, None, StopReason::MaxTokens))
    }
}
