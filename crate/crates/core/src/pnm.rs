//! Binary netpbm encoders for saliency heatmaps, masks, and masked images.

use crate::saliency::{BinaryMask, Image, SaliencyMap};
use crate::scalar::Scalar;

fn header(magic: &str, w: usize, h: usize) -> Vec<u8> {
    format!("{magic}\n{w} {h}\n255\n").into_bytes()
}

/// Grayscale P5 heatmap, one pixel per patch, value `round(255 * s)`.
/// Unnormalized maps are min-max normalized first.
pub fn saliency_pgm<T: Scalar>(s: &SaliencyMap<T>) -> Vec<u8> {
    let s = if s.is_normalized() {
        s.clone()
    } else {
        s.clone().normalize()
    };
    let mut out = header("P5", s.cols(), s.rows());
    out.extend(
        s.values()
            .iter()
            .map(|v| (v.to_f64_lossy() * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

/// P5 mask with values {0, 255}.
pub fn mask_pgm(m: &BinaryMask) -> Vec<u8> {
    let mut out = header("P5", m.width(), m.height());
    out.extend(m.bits().iter().map(|&b| b * 255));
    out
}

/// P6 color image.
pub fn image_ppm(img: &Image) -> Vec<u8> {
    let mut out = header("P6", img.width(), img.height());
    out.extend_from_slice(img.pixels());
    out
}
