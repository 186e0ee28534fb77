//! Deterministic stand-ins for the language model, the matcher, and the VQA
//! model. Scenes are grids of concept words rendered as flat color patches;
//! colors are how the matcher and VQA model "see" what survived masking.

pub mod lm;
pub mod matcher;
pub mod scene;
pub mod vqa;

pub use lm::ToyLm;
pub use matcher::ToyMatcher;
pub use scene::{Palette, ToyScene};
pub use vqa::ToyVqa;

/// Shared vocabulary and palette for a set of toy backends.
#[derive(Debug, Clone)]
pub struct ToyWorld {
    lm: ToyLm,
    palette: Palette,
}

impl ToyWorld {
    pub fn standard() -> Self {
        let lm = ToyLm::standard();
        let concepts: Vec<String> = lm.successors("a").into_iter().map(str::to_string).collect();
        let palette = Palette::new(&concepts, scene::PALETTE_SEED);
        Self { lm, palette }
    }

    /// Concepts that can appear in scenes.
    pub fn concepts(&self) -> &[String] {
        self.palette.concepts()
    }

    pub fn palette(&self) -> &Palette {
        &self.palette
    }

    pub fn lm(&self) -> ToyLm {
        self.lm.clone()
    }

    pub fn matcher(&self) -> ToyMatcher {
        ToyMatcher::new(self.palette.clone())
    }

    pub fn vqa(&self, rows: usize, cols: usize) -> ToyVqa {
        ToyVqa::new(self.palette.clone(), rows, cols)
    }
}
