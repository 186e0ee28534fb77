//! Per-patch saliency from a rollout, thresholded pixel masks, and masked
//! images.

use crate::error::{Error, Result};
use crate::rollout::{AttentionStack, RolloutState};
use crate::scalar::Scalar;

/// Per-patch relevance on the patch grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
    normalized: bool,
}

impl<T: Scalar> SaliencyMap<T> {
    /// Wraps raw (unnormalized) values, e.g. from an external attribution method.
    pub fn from_raw(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::invalid(format!(
                "saliency grid {rows}x{cols} with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("saliency values must be finite"));
        }
        Ok(Self {
            rows,
            cols,
            values,
            normalized: false,
        })
    }

    /// Min-max normalization to [0, 1]. A constant map becomes all zeros.
    pub fn normalize(mut self) -> Self {
        let lo = self.values.iter().copied().fold(T::infinity(), T::min);
        let hi = self.values.iter().copied().fold(T::neg_infinity(), T::max);
        let span = hi - lo;
        // spreads at round-off level count as constant
        let noise = T::epsilon() * T::of(64.0) * hi.abs().max(lo.abs());
        let flat = !(span > noise);
        for v in &mut self.values {
            *v = if flat { T::zero() } else { (*v - lo) / span };
        }
        self.normalized = true;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.cols + col]
    }

    /// Index of the largest value, first in row-major order on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

/// Mean of the cross accumulator over question rows, without the
/// classification column, reshaped to the patch grid. Not normalized.
pub fn raw_saliency<T: Scalar>(
    state: &RolloutState<T>,
    stack: &AttentionStack<T>,
) -> Result<SaliencyMap<T>> {
    let rqi = &state.rqi;
    if rqi.shape() != (stack.q_len, stack.i_len) {
        return Err(Error::invalid(format!(
            "cross accumulator {:?} does not match stack {}x{}",
            rqi.shape(),
            stack.q_len,
            stack.i_len
        )));
    }
    let q = T::from_usize(stack.q_len).expect("length fits float");
    let values = (stack.cls_offset..stack.i_len)
        .map(|c| (0..stack.q_len).fold(T::zero(), |acc, r| acc + rqi[(r, c)]) / q)
        .collect();
    let (rows, cols) = stack.patch_grid;
    SaliencyMap::from_raw(rows, cols, values)
}

/// Normalized saliency map of a completed rollout.
pub fn saliency<T: Scalar>(
    state: &RolloutState<T>,
    stack: &AttentionStack<T>,
) -> Result<SaliencyMap<T>> {
    Ok(raw_saliency(state, stack)?.normalize())
}

/// Patch-level mask: `tau < s`. When nothing passes, the argmax patch is kept
/// so the masked image never goes fully black.
pub fn patch_mask<T: Scalar>(s: &SaliencyMap<T>, tau: T) -> Result<Vec<bool>> {
    if !(tau >= T::zero() && tau <= T::one()) {
        return Err(Error::invalid(format!("tau {tau} outside [0, 1]")));
    }
    let mut bits: Vec<bool> = s.values.iter().map(|&v| tau < v).collect();
    if !bits.iter().any(|&b| b) {
        bits[s.argmax()] = true;
    }
    Ok(bits)
}

/// Pixel blocks covered by each patch. Each block is `dim / patches` wide;
/// the remainder goes to the trailing block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub width: usize,
    pub height: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGeometry {
    pub fn new(width: usize, height: usize, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || width < cols || height < rows {
            return Err(Error::invalid(format!(
                "cannot spread a {rows}x{cols} patch grid over {width}x{height} pixels"
            )));
        }
        Ok(Self {
            width,
            height,
            rows,
            cols,
        })
    }

    fn block_w(&self) -> usize {
        self.width / self.cols
    }

    fn block_h(&self) -> usize {
        self.height / self.rows
    }

    /// Patch (row, col) covering pixel (x, y).
    pub fn patch_of(&self, x: usize, y: usize) -> (usize, usize) {
        (
            (y / self.block_h()).min(self.rows - 1),
            (x / self.block_w()).min(self.cols - 1),
        )
    }

    /// Pixel rectangle `(x0, y0, x1, y1)` (exclusive ends) of a patch.
    pub fn block(&self, row: usize, col: usize) -> (usize, usize, usize, usize) {
        let (bw, bh) = (self.block_w(), self.block_h());
        let x1 = if col + 1 == self.cols {
            self.width
        } else {
            (col + 1) * bw
        };
        let y1 = if row + 1 == self.rows {
            self.height
        } else {
            (row + 1) * bh
        };
        (col * bw, row * bh, x1, y1)
    }

    pub fn block_area(&self, row: usize, col: usize) -> usize {
        let (x0, y0, x1, y1) = self.block(row, col);
        (x1 - x0) * (y1 - y0)
    }
}

/// Pixel-resolution mask with entries in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn from_bits(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != width * height || bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid(
                "mask bits must be 0/1 and cover width*height",
            ));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Nearest-neighbor upscaling of a patch mask.
    pub fn from_patches(geom: PatchGeometry, patches: &[bool]) -> Result<Self> {
        if patches.len() != geom.rows * geom.cols {
            return Err(Error::invalid("patch mask does not match geometry"));
        }
        let mut bits = Vec::with_capacity(geom.width * geom.height);
        for y in 0..geom.height {
            for x in 0..geom.width {
                let (r, c) = geom.patch_of(x, y);
                bits.push(patches[r * geom.cols + c] as u8);
            }
        }
        Ok(Self {
            width: geom.width,
            height: geom.height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }
}

/// Thresholds a normalized saliency map and rescales it to `out_w x out_h`.
pub fn threshold_mask<T: Scalar>(
    s: &SaliencyMap<T>,
    tau: T,
    out_w: usize,
    out_h: usize,
) -> Result<BinaryMask> {
    let patches = patch_mask(s, tau)?;
    BinaryMask::from_patches(PatchGeometry::new(out_w, out_h, s.rows, s.cols)?, &patches)
}

/// 8-bit RGB image, row-major, 3 samples per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height * Self::CHANNELS {
            return Err(Error::invalid(format!(
                "RGB image {width}x{height} needs {} bytes, got {}",
                width * height * Self::CHANNELS,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Number of pixels whose samples are all zero.
    pub fn count_black(&self) -> usize {
        self.pixels
            .chunks(3)
            .filter(|p| p.iter().all(|&v| v == 0))
            .count()
    }
}

/// An image with every pixel outside its mask set to zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedImage(Image);

impl MaskedImage {
    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }
}

/// Element-wise product of the image with the mask.
pub fn apply_mask(img: &Image, mask: &BinaryMask) -> Result<MaskedImage> {
    if (img.width, img.height) != (mask.width, mask.height) {
        return Err(Error::invalid(format!(
            "mask {}x{} does not match image {}x{}",
            mask.width, mask.height, img.width, img.height
        )));
    }
    let pixels = img
        .pixels
        .chunks(3)
        .zip(&mask.bits)
        .flat_map(|(p, &b)| p.iter().map(move |&v| v * b))
        .collect();
    Ok(MaskedImage(Image {
        width: img.width,
        height: img.height,
        pixels,
    }))
}
