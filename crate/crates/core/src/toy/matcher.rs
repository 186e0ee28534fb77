use std::collections::BTreeMap;

use crate::backend::MatcherBackend;
use crate::error::Result;
use crate::saliency::Image;
use crate::toy::lm::split_words;
use crate::toy::scene::Palette;

/// Bag-of-words stand-in for image-text matching: cosine between the
/// visible-concept indicator vector and the sentence word counts.
#[derive(Debug, Clone)]
pub struct ToyMatcher {
    palette: Palette,
}

impl ToyMatcher {
    pub fn new(palette: Palette) -> Self {
        Self { palette }
    }

    pub fn score(&self, visible: &[&str], sentence: &str) -> f64 {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for w in split_words(sentence) {
            if w.chars().any(char::is_alphanumeric) {
                *counts.entry(w).or_default() += 1;
            }
        }
        if visible.is_empty() || counts.is_empty() {
            return 0.0;
        }
        let dot: usize = visible
            .iter()
            .map(|c| counts.get(*c).copied().unwrap_or(0))
            .sum();
        let norm_s: usize = counts.values().map(|n| n * n).sum();
        dot as f64 / ((visible.len() as f64).sqrt() * (norm_s as f64).sqrt())
    }
}

impl MatcherBackend for ToyMatcher {
    fn cosine_scores(&self, image: &Image, sentences: &[String]) -> Result<Vec<f64>> {
        let visible = self.palette.visible(image);
        Ok(sentences.iter().map(|s| self.score(&visible, s)).collect())
    }
}
