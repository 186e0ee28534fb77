//! Bigram language model over a small fixed vocabulary.

use std::collections::HashMap;

use crate::backend::{LanguageModelBackend, Token, TokenDist, TokenId};
use crate::error::{Error, Result};

/// The shipped table. Changing it changes every toy output.
pub const TOY_LM_TABLE: &str = include_str!("../../data/toy_lm.txt");

pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
const BEGIN: &str = "<s>";
const UNIGRAM: &str = "*";
const PERIOD_FLOOR: f64 = 0.1;

const PUNCT: &[char] = &['.', ',', '?', ':', '!', ';'];

#[derive(Debug, Clone)]
pub struct ToyLm {
    vocab: Vec<String>,
    index: HashMap<String, TokenId>,
    /// Per previous token, renormalized next-token probabilities over the vocabulary.
    rows: HashMap<TokenId, Vec<f64>>,
    begin: Vec<f64>,
    unigram: Vec<f64>,
}

impl ToyLm {
    pub fn standard() -> Self {
        Self::from_table(TOY_LM_TABLE).expect("shipped table parses")
    }

    /// Parses `prev next prob` lines. Vocabulary ids follow first appearance,
    /// after the `<eos>` and `<unk>` specials.
    pub fn from_table(text: &str) -> Result<Self> {
        let mut triples = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [prev, next, p] = parts[..] else {
                return Err(Error::invalid(format!(
                    "toy table line {}: expected 3 fields",
                    n + 1
                )));
            };
            let p: f64 = p.parse().map_err(|_| {
                Error::invalid(format!("toy table line {}: bad probability {p:?}", n + 1))
            })?;
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::invalid(format!(
                    "toy table line {}: negative probability",
                    n + 1
                )));
            }
            triples.push((prev, next, p));
        }

        let mut vocab: Vec<String> = vec![EOS.into(), UNK.into()];
        let mut index: HashMap<String, TokenId> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        for &(prev, next, _) in &triples {
            for w in [prev, next] {
                if w != BEGIN && w != UNIGRAM && !index.contains_key(w) {
                    index.insert(w.to_string(), vocab.len() as TokenId);
                    vocab.push(w.to_string());
                }
            }
        }

        let n = vocab.len();
        let mut raw: HashMap<&str, Vec<f64>> = HashMap::new();
        for &(prev, next, p) in &triples {
            raw.entry(prev).or_insert_with(|| vec![0.0; n])[index[next] as usize] += p;
        }
        let normalize = |mut v: Vec<f64>| -> Result<Vec<f64>> {
            let s: f64 = v.iter().sum();
            if s <= 0.0 {
                return Err(Error::invalid("toy table row has zero mass"));
            }
            v.iter_mut().for_each(|x| *x /= s);
            Ok(v)
        };

        let mut unigram = normalize(
            raw.remove(UNIGRAM)
                .ok_or_else(|| Error::invalid("toy table lacks unigram rows"))?,
        )?;
        if let Some(&dot) = index.get(".") {
            let d = dot as usize;
            if unigram[d] < PERIOD_FLOOR {
                let rest = 1.0 - unigram[d];
                let scale = (1.0 - PERIOD_FLOOR) / rest;
                unigram.iter_mut().for_each(|x| *x *= scale);
                unigram[d] = PERIOD_FLOOR;
            }
        }
        let begin = match raw.remove(BEGIN) {
            Some(row) => normalize(row)?,
            None => unigram.clone(),
        };
        let rows = raw
            .into_iter()
            .map(|(prev, row)| Ok((index[prev], normalize(row)?)))
            .collect::<Result<_>>()?;

        Ok(Self {
            vocab,
            index,
            rows,
            begin,
            unigram,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn id_of(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn surface(&self, id: TokenId) -> Result<&str> {
        self.vocab
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| Error::invalid(format!("unknown token id {id}")))
    }

    /// Words the table lists after `prev`, in vocabulary order.
    pub fn successors(&self, prev: &str) -> Vec<&str> {
        let Some(row) = self.id_of(prev).and_then(|id| self.rows.get(&id)) else {
            return Vec::new();
        };
        row.iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| self.vocab[i].as_str())
            .collect()
    }

    fn row_for(&self, tokens: &[TokenId]) -> Result<&[f64]> {
        for &t in tokens {
            self.surface(t)?;
        }
        Ok(match tokens.last() {
            None => &self.begin,
            Some(t) => self.rows.get(t).map_or(&self.unigram, Vec::as_slice),
        })
    }
}

/// Lowercased words with punctuation split off.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if PUNCT.contains(&ch) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.extend(ch.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

impl LanguageModelBackend for ToyLm {
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        Ok(split_words(text)
            .iter()
            .map(|w| self.id_of(w).unwrap_or(1))
            .collect())
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &t in tokens {
            let s = self.surface(t)?;
            if s == EOS {
                continue;
            }
            let glue = s.len() == 1 && s.chars().all(|c| PUNCT.contains(&c));
            if !out.is_empty() && !glue {
                out.push(' ');
            }
            out.push_str(s);
        }
        Ok(out)
    }

    fn next_dist(&self, tokens: &[TokenId], top_k: usize) -> Result<TokenDist> {
        let row = self.row_for(tokens)?;
        let mut order: Vec<usize> = (0..row.len()).collect();
        // stable sort: equal probabilities keep vocabulary order
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        Ok(TokenDist {
            entries: order
                .into_iter()
                .take(top_k)
                .map(|i| {
                    (
                        Token {
                            id: i as TokenId,
                            surface: self.vocab[i].clone(),
                        },
                        row[i],
                    )
                })
                .collect(),
        })
    }

    fn eos(&self) -> Option<TokenId> {
        Some(0)
    }
}
