//! File input and atomic output.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use a2t::toy::ToyScene;
use a2t::Image;
use anyhow::{Context, Result};

/// Marks failures caused by malformed or mismatched input files.
#[derive(Debug)]
pub struct BadInput(pub String);

impl fmt::Display for BadInput {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BadInput {}

pub fn bad_input(msg: impl Into<String>) -> anyhow::Error {
    BadInput(msg.into()).into()
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| bad_input(format!("cannot read {}: {e}", path.display())))
}

/// Loads a PNG or PPM as RGB8.
pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| bad_input(format!("cannot decode image {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Image::new(w as usize, h as usize, img.into_raw()).map_err(|e| bad_input(e.to_string()))
}

pub fn load_scene(path: &Path) -> Result<ToyScene> {
    ToyScene::from_json(&read_text(path)?)
        .map_err(|e| bad_input(format!("scene {}: {e}", path.display())))
}

/// Output directory; created on first use.
pub struct OutDir(PathBuf);

impl OutDir {
    pub fn new(path: &Path) -> Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self(path.to_path_buf()))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let target = self.path(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.0)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&target)
            .with_context(|| format!("writing {}", target.display()))?;
        Ok(target)
    }

    pub fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }
}

/// Parses `RxC` such as `1x2`.
pub fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let r: usize = r
        .trim()
        .parse()
        .map_err(|_| format!("bad row count in {s:?}"))?;
    let c: usize = c
        .trim()
        .parse()
        .map_err(|_| format!("bad column count in {s:?}"))?;
    if r == 0 || c == 0 {
        return Err("grid dimensions must be positive".into());
    }
    Ok((r, c))
}
