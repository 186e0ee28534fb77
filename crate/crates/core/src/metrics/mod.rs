//! Reference-based caption metrics (BLEU, ROUGE-L, CIDEr-D) and the
//! evaluation protocols built on them.

mod bleu;
mod cider;
pub mod eval;
mod rouge;

use std::collections::HashMap;

pub use bleu::{bleu, corpus_bleu, BleuStats};
pub use cider::{cider_d, CiderD, CiderScores, CIDER_SCALE, CIDER_SIGMA};
pub use eval::{
    evaluate, normalize_answer, read_records, score_records, EvalMode, EvalRecord, MetricRow,
    MetricScores, MetricTable,
};
pub use rouge::{lcs_len, rouge_l, rouge_l_tokens, ROUGE_BETA};

/// Shared normalizer for hypotheses and references: lowercase, every
/// non-alphanumeric character except the apostrophe is a separator, and
/// punctuation itself is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.trim_matches('\''))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

pub(crate) type NgramCounts<'a> = HashMap<&'a [String], usize>;

pub(crate) fn ngrams(tokens: &[String], n: usize) -> NgramCounts<'_> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizer() {
        assert_eq!(tokenize("The bus, is RED."), ["the", "bus", "is", "red"]);
        assert_eq!(tokenize("it's 'here'"), ["it's", "here"]);
        assert!(tokenize(" .,!").is_empty());
    }

    #[test]
    fn ngram_counts() {
        let t = tokenize("a b a b");
        let c = ngrams(&t, 2);
        assert_eq!(c.len(), 2);
        assert_eq!(c[&t[0..2]], 2);
        assert!(ngrams(&t, 5).is_empty());
    }
}
