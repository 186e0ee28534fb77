use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::saliency::{Image, PatchGeometry};

pub const DEFAULT_PATCH_PX: usize = 16;
pub const PALETTE_SEED: u64 = 0x05ee_da27;

/// Bijective concept <-> flat color mapping. Black is never used so masked
/// pixels decode to nothing.
#[derive(Debug, Clone)]
pub struct Palette {
    concepts: Vec<String>,
    colors: Vec<[u8; 3]>,
    by_color: HashMap<[u8; 3], usize>,
}

impl Palette {
    pub fn new(concepts: &[String], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut colors: Vec<[u8; 3]> = Vec::with_capacity(concepts.len());
        let mut by_color = HashMap::new();
        for i in 0..concepts.len() {
            let c = loop {
                let c: [u8; 3] = [
                    rng.gen_range(32..=255),
                    rng.gen_range(32..=255),
                    rng.gen_range(32..=255),
                ];
                if !by_color.contains_key(&c) {
                    break c;
                }
            };
            by_color.insert(c, i);
            colors.push(c);
        }
        Self {
            concepts: concepts.to_vec(),
            colors,
            by_color,
        }
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn color_of(&self, concept: &str) -> Option<[u8; 3]> {
        self.concepts
            .iter()
            .position(|c| c == concept)
            .map(|i| self.colors[i])
    }

    pub fn concept_of(&self, rgb: [u8; 3]) -> Option<&str> {
        self.by_color.get(&rgb).map(|&i| self.concepts[i].as_str())
    }

    /// Concepts with at least one pixel in the image, in palette order.
    pub fn visible(&self, img: &Image) -> Vec<&str> {
        let mut seen = vec![false; self.concepts.len()];
        for p in img.pixels().chunks(3) {
            if let Some(&i) = self.by_color.get(&[p[0], p[1], p[2]]) {
                seen[i] = true;
            }
        }
        seen.iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| self.concepts[i].as_str())
            .collect()
    }
}

/// A grid of concept words; each patch renders as its concept's flat color.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyScene {
    pub grid: Vec<Vec<String>>,
    #[serde(default = "default_patch_px")]
    pub patch_size: usize,
}

fn default_patch_px() -> usize {
    DEFAULT_PATCH_PX
}

impl ToyScene {
    pub fn new(grid: Vec<Vec<String>>) -> Result<Self> {
        let scene = Self {
            grid,
            patch_size: DEFAULT_PATCH_PX,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scene: Self = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scene serializes")
    }

    fn validate(&self) -> Result<()> {
        let cols = self.grid.first().map_or(0, Vec::len);
        if cols == 0 || self.grid.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("scene grid must be a non-empty rectangle"));
        }
        if self.patch_size == 0 {
            return Err(Error::invalid("scene patch_size must be positive"));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.grid.len()
    }

    pub fn cols(&self) -> usize {
        self.grid[0].len()
    }

    pub fn concept(&self, row: usize, col: usize) -> &str {
        &self.grid[row][col]
    }

    pub fn render(&self, palette: &Palette) -> Result<Image> {
        let (w, h) = (self.cols() * self.patch_size, self.rows() * self.patch_size);
        let geom = PatchGeometry::new(w, h, self.rows(), self.cols())?;
        let mut img = Image::filled(w, h, [0, 0, 0]);
        for r in 0..self.rows() {
            for c in 0..self.cols() {
                let word = self.concept(r, c);
                let rgb = palette.color_of(word).ok_or_else(|| {
                    Error::invalid(format!("scene concept {word:?} has no color"))
                })?;
                let (x0, y0, x1, y1) = geom.block(r, c);
                for y in y0..y1 {
                    for x in x0..x1 {
                        img.set_pixel(x, y, rgb);
                    }
                }
            }
        }
        Ok(img)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn palette() -> Palette {
        let concepts: Vec<String> = ["bus", "tree", "road", "dog"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        Palette::new(&concepts, PALETTE_SEED)
    }

    #[test]
    fn palette_is_bijective_and_deterministic() {
        let p = palette();
        for c in p.concepts() {
            assert_eq!(p.concept_of(p.color_of(c).unwrap()), Some(c.as_str()));
        }
        assert_eq!(p.color_of("dog"), palette().color_of("dog"));
        assert_eq!(p.concept_of([0, 0, 0]), None);
    }

    #[test]
    fn render_and_decode() {
        let p = palette();
        let scene =
            ToyScene::from_json(r#"{"grid": [["bus", "tree"], ["road", "dog"]], "patch_size": 4}"#)
                .unwrap();
        let img = scene.render(&p).unwrap();
        assert_eq!((img.width(), img.height()), (8, 8));
        assert_eq!(p.concept_of(img.pixel(5, 1)), Some("tree"));
        assert_eq!(p.visible(&img), vec!["bus", "tree", "road", "dog"]);
    }

    #[test]
    fn rejects_ragged_or_unknown() {
        assert!(ToyScene::from_json(r#"{"grid": [["bus"], ["road", "dog"]]}"#).is_err());
        let s = ToyScene::new(vec![vec!["spaceship".into()]]).unwrap();
        assert!(s.render(&palette()).is_err());
    }
}
