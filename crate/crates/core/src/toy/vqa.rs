//! VQA stand-in that answers "what is on the <position>" over a rendered
//! scene and records attention concentrated on the answer patch.

use crate::backend::{VqaBackend, VqaOutput};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rollout::{AttentionStack, HeadTensor, LayerAttention};
use crate::saliency::{Image, PatchGeometry};
use crate::toy::lm::split_words;
use crate::toy::scene::Palette;

/// Weight of the answer patch in each cross-attention row, per head.
const FOCUS: [f64; 2] = [0.9, 0.95];

#[derive(Debug, Clone)]
pub struct ToyVqa {
    palette: Palette,
    rows: usize,
    cols: usize,
    uniform: bool,
}

impl ToyVqa {
    pub fn new(palette: Palette, rows: usize, cols: usize) -> Self {
        Self {
            palette,
            rows,
            cols,
            uniform: false,
        }
    }

    /// Variant whose every attention row is uniform.
    pub fn uniform(mut self) -> Self {
        self.uniform = true;
        self
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Patch addressed by the question, `(row, col)`.
    ///
    /// Accepts `what is on/in/at the <top|bottom|upper|lower>? <left|right>?`
    /// with `middle`/`center` for the central index, or
    /// `what is in row R column C` (1-based). An unspecified axis means the
    /// central index.
    pub fn locate(&self, question: &str) -> Result<(usize, usize)> {
        let words: Vec<String> = split_words(question)
            .into_iter()
            .filter(|w| w.chars().all(char::is_alphanumeric))
            .collect();
        let bad = || Error::Unanswerable(format!("cannot parse position from {question:?}"));
        if words.len() < 3 || words[0] != "what" || words[1] != "is" {
            return Err(bad());
        }
        let (mut row, mut col) = (None, None);
        let mut it = words[2..].iter().peekable();
        let mut saw_position = false;
        while let Some(w) = it.next() {
            match w.as_str() {
                "on" | "in" | "at" | "the" | "of" | "image" | "picture" => {}
                "top" | "upper" => row = Some(0),
                "bottom" | "lower" => row = Some(self.rows - 1),
                "left" => col = Some(0),
                "right" => col = Some(self.cols - 1),
                "middle" | "center" => {}
                "row" | "column" => {
                    let n: usize = it.next().and_then(|n| n.parse().ok()).ok_or_else(bad)?;
                    let (limit, slot) = if w == "row" {
                        (self.rows, &mut row)
                    } else {
                        (self.cols, &mut col)
                    };
                    if n == 0 || n > limit {
                        return Err(bad());
                    }
                    *slot = Some(n - 1);
                }
                _ => return Err(bad()),
            }
            saw_position |= !matches!(
                w.as_str(),
                "on" | "in" | "at" | "the" | "of" | "image" | "picture"
            );
        }
        if !saw_position {
            return Err(bad());
        }
        Ok((
            row.unwrap_or((self.rows - 1) / 2),
            col.unwrap_or((self.cols - 1) / 2),
        ))
    }

    fn mixed(n: usize, self_weight: f64) -> Matrix<f64> {
        let u = (1.0 - self_weight) / n as f64;
        let mut m = Matrix::from_vec(n, n, vec![u; n * n]).expect("square");
        for i in 0..n {
            m[(i, i)] += self_weight;
        }
        m
    }

    fn uniform_matrix(rows: usize, cols: usize) -> Matrix<f64> {
        Matrix::from_vec(rows, cols, vec![1.0 / cols as f64; rows * cols]).expect("shape")
    }

    fn focused(rows: usize, cols: usize, target: usize, focus: f64) -> Matrix<f64> {
        let spread = (1.0 - focus) / (cols - 1) as f64;
        let mut m = Matrix::from_vec(rows, cols, vec![spread; rows * cols]).expect("shape");
        for r in 0..rows {
            m[(r, target)] = focus;
        }
        m
    }

    /// Stack for a question of `q_len` words focusing on `target` patch.
    pub fn build_stack(&self, q_len: usize, target: usize) -> Result<AttentionStack<f64>> {
        let i_len = self.rows * self.cols + 1;
        let heads = |ms: Vec<Matrix<f64>>| HeadTensor::from_heads(&ms);
        let (qq, ii, qi) = if self.uniform {
            (
                heads(vec![Self::uniform_matrix(q_len, q_len); 2])?,
                heads(vec![Self::uniform_matrix(i_len, i_len); 2])?,
                heads(vec![Self::uniform_matrix(q_len, i_len); 2])?,
            )
        } else {
            (
                heads(vec![
                    Self::mixed(q_len, 0.5),
                    Self::uniform_matrix(q_len, q_len),
                ])?,
                heads(vec![
                    Self::mixed(i_len, 0.6),
                    Self::uniform_matrix(i_len, i_len),
                ])?,
                heads(
                    FOCUS
                        .iter()
                        .map(|&f| Self::focused(q_len, i_len, target + 1, f))
                        .collect(),
                )?,
            )
        };
        AttentionStack::new(
            vec![
                LayerAttention::image_self(ii.clone()),
                LayerAttention::image_self(ii),
                LayerAttention::question_self(qq.clone()),
                LayerAttention::fusion(qq.clone(), qi.clone()),
                LayerAttention::fusion(qq, qi),
            ],
            q_len,
            i_len,
            1,
            (self.rows, self.cols),
        )
    }
}

impl VqaBackend for ToyVqa {
    fn infer(&self, image: &Image, question: &str) -> Result<VqaOutput> {
        let (r, c) = self.locate(question)?;
        let geom = PatchGeometry::new(image.width(), image.height(), self.rows, self.cols)?;
        let (x0, y0, x1, y1) = geom.block(r, c);
        let rgb = image.pixel((x0 + x1) / 2, (y0 + y1) / 2);
        let answer = self
            .palette
            .concept_of(rgb)
            .ok_or_else(|| Error::Unanswerable(format!("no known concept at row {r} column {c}")))?
            .to_string();
        let q_len = split_words(question).len().max(1);
        let stack = self.build_stack(q_len, r * self.cols + c)?;
        Ok(VqaOutput { answer, stack })
    }
}
