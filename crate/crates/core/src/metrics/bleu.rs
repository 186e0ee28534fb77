use super::{ngrams, tokenize};
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Clipped n-gram matches and lengths for one hypothesis; summing these
/// gives corpus-level BLEU.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BleuStats {
    pub correct: [usize; MAX_ORDER],
    pub guess: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn of(hyp: &[String], refs: &[Vec<String>]) -> Self {
        let mut s = Self {
            hyp_len: hyp.len(),
            ref_len: closest_ref_len(hyp.len(), refs),
            ..Self::default()
        };
        for n in 1..=MAX_ORDER {
            let h = ngrams(hyp, n);
            let ref_counts: Vec<_> = refs.iter().map(|r| ngrams(r, n)).collect();
            for (g, &c) in &h {
                let max_ref = ref_counts
                    .iter()
                    .map(|rc| rc.get(g).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                s.correct[n - 1] += c.min(max_ref);
            }
            s.guess[n - 1] = hyp.len().saturating_sub(n - 1);
        }
        s
    }

    pub fn merge(&mut self, other: &Self) {
        for i in 0..MAX_ORDER {
            self.correct[i] += other.correct[i];
            self.guess[i] += other.guess[i];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// Unsmoothed BLEU-n: any zero precision gives 0.
    pub fn score(&self, n: usize) -> Result<f64> {
        check_order(n)?;
        if self.hyp_len == 0 {
            return Ok(0.0);
        }
        let mut log_sum = 0.0;
        for i in 0..n {
            if self.correct[i] == 0 || self.guess[i] == 0 {
                return Ok(0.0);
            }
            log_sum += (self.correct[i] as f64 / self.guess[i] as f64).ln();
        }
        let bp = if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        };
        Ok(bp * (log_sum / n as f64).exp())
    }
}

/// Reference length closest to the hypothesis length; the shorter wins ties.
fn closest_ref_len(hyp_len: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(hyp_len), r))
        .unwrap_or(0)
}

fn check_order(n: usize) -> Result<()> {
    if !(1..=MAX_ORDER).contains(&n) {
        return Err(Error::invalid(format!(
            "BLEU order must be in 1..=4, got {n}"
        )));
    }
    Ok(())
}

/// Sentence-level BLEU-n.
pub fn bleu(hypothesis: &str, references: &[&str], n: usize) -> Result<f64> {
    check_order(n)?;
    let hyp = tokenize(hypothesis);
    let refs: Vec<_> = references.iter().map(|r| tokenize(r)).collect();
    BleuStats::of(&hyp, &refs).score(n)
}

/// Corpus-level BLEU-n from pre-tokenized pairs.
pub fn corpus_bleu(pairs: &[(Vec<String>, Vec<Vec<String>>)], n: usize) -> Result<f64> {
    check_order(n)?;
    let mut total = BleuStats::default();
    for (h, r) in pairs {
        total.merge(&BleuStats::of(h, r));
    }
    total.score(n)
}
