//! Binary PGM (`P5`) output for attention masks.
//!
//! A file is the ASCII header `P5\n<width> <height>\n255\n` followed by one
//! byte per pixel, rows top to bottom.

use std::path::Path;

use crate::error::{write_file, Result};

pub fn encode_p5(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pgm payload size");
    let mut out = format!("P5\n{} {}\n255\n", width, height).into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write_p5(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    write_file(path, &encode_p5(width, height, pixels))
}

/// Min-max scales values to `0..=255`. A constant input maps to all zeros.
pub fn to_gray(values: &[f32]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let range = hi - lo;
    if !(range > 0.0) || !range.is_finite() {
        return vec![0; values.len()];
    }
    values.iter().map(|&v| ((v - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8).collect()
}

/// Nearest-neighbour upsampling of an `h x w` map to `oh x ow`.
pub fn resize_nearest(src: &[u8], h: usize, w: usize, oh: usize, ow: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let sy = y * h / oh;
        for x in 0..ow {
            out.push(src[sy * w + x * w / ow]);
        }
    }
    out
}

/// 50% blend of two equally sized gray images, rounding halves up.
pub fn blend_half(a: &[u8], b: &[u8]) -> Vec<u8> {
    a.iter().zip(b).map(|(&x, &y)| ((x as u16 + y as u16 + 1) / 2) as u8).collect()
}
