use std::collections::HashMap;

use super::{ngrams, tokenize, NgramCounts};
use crate::error::{Error, Result};

pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;
const MAX_N: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct CiderScores {
    pub per_item: Vec<f64>,
    pub mean: f64,
    /// Fewer than two items: every idf is zero and scores carry no signal.
    pub degenerate: bool,
}

/// CIDEr-D with a gaussian length penalty and clipped tf-idf vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiderD {
    pub sigma: f64,
    pub scale: f64,
}

impl Default for CiderD {
    fn default() -> Self {
        Self {
            sigma: CIDER_SIGMA,
            scale: CIDER_SCALE,
        }
    }
}

struct TfIdf<'a> {
    vec: Vec<HashMap<&'a [String], f64>>,
    norm: Vec<f64>,
    len: usize,
}

impl CiderD {
    fn vectorize<'a>(
        &self,
        tokens: &'a [String],
        df: &HashMap<&[String], usize>,
        log_n: f64,
    ) -> TfIdf<'a> {
        let mut vec = Vec::with_capacity(MAX_N);
        let mut norm = Vec::with_capacity(MAX_N);
        for n in 1..=MAX_N {
            let counts: NgramCounts<'a> = ngrams(tokens, n);
            let v: HashMap<_, _> = counts
                .into_iter()
                .map(|(g, tf)| {
                    let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
                    (g, tf as f64 * (log_n - d.ln()))
                })
                .collect();
            norm.push(v.values().map(|x| x * x).sum::<f64>().sqrt());
            vec.push(v);
        }
        TfIdf {
            vec,
            norm,
            len: tokens.len(),
        }
    }

    fn sim(&self, h: &TfIdf, r: &TfIdf) -> f64 {
        let delta = h.len as f64 - r.len as f64;
        let penalty = (-(delta * delta) / (2.0 * self.sigma * self.sigma)).exp();
        let mut total = 0.0;
        for n in 0..MAX_N {
            let mut val = 0.0;
            for (g, &hv) in &h.vec[n] {
                if let Some(&rv) = r.vec[n].get(g) {
                    val += hv.min(rv) * rv;
                }
            }
            if h.norm[n] != 0.0 && r.norm[n] != 0.0 {
                val /= h.norm[n] * r.norm[n];
            }
            total += val * penalty;
        }
        total / MAX_N as f64
    }

    /// Scores a corpus of tokenized hypotheses; document frequencies come
    /// from the reference sets, one document per item.
    pub fn score(&self, hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<CiderScores> {
        if hyps.len() != refs.len() {
            return Err(Error::invalid(format!(
                "{} hypotheses but {} reference sets",
                hyps.len(),
                refs.len()
            )));
        }
        if let Some(i) = refs.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!("item {i} has no references")));
        }
        let mut df: HashMap<&[String], usize> = HashMap::new();
        for set in refs {
            let mut seen: HashMap<&[String], ()> = HashMap::new();
            for r in set {
                for n in 1..=MAX_N {
                    for g in ngrams(r, n).into_keys() {
                        seen.insert(g, ());
                    }
                }
            }
            for g in seen.into_keys() {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        let degenerate = hyps.len() < 2;
        if degenerate {
            log::warn!(
                "CIDEr-D on a corpus of {} item(s): idf is degenerate",
                hyps.len()
            );
        }
        let log_n = (hyps.len().max(1) as f64).ln();
        let per_item: Vec<f64> = hyps
            .iter()
            .zip(refs)
            .map(|(h, set)| {
                let hv = self.vectorize(h, &df, log_n);
                let s: f64 = set
                    .iter()
                    .map(|r| self.sim(&hv, &self.vectorize(r, &df, log_n)))
                    .sum();
                s / set.len() as f64 * self.scale
            })
            .collect();
        let mean = if per_item.is_empty() {
            0.0
        } else {
            per_item.iter().sum::<f64>() / per_item.len() as f64
        };
        Ok(CiderScores {
            per_item,
            mean,
            degenerate,
        })
    }
}

/// Corpus CIDEr-D with default parameters on raw text.
pub fn cider_d(hypotheses: &[&str], reference_sets: &[Vec<&str>]) -> Result<CiderScores> {
    let hyps: Vec<_> = hypotheses.iter().map(|h| tokenize(h)).collect();
    let refs: Vec<Vec<_>> = reference_sets
        .iter()
        .map(|s| s.iter().map(|r| tokenize(r)).collect())
        .collect();
    CiderD::default().score(&hyps, &refs)
}
