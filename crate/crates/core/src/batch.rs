//! In-memory image sets, shuffled mini-batches and CIFAR-style augmentation.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::init::Rng64;
use crate::{Real, Tensor};

/// Images `[N,C,H,W]` with one label per image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> ImageSet<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        if images.rank() != 4 || images.shape()[0] != labels.len() {
            return Err(dim_err(
                "image_set",
                format!("images {:?} need shape [N,C,H,W] with N = {} labels", images.shape(), labels.len()),
            ));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)`.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn image(&self, i: usize) -> &[T] {
        let (c, h, w) = self.image_shape();
        let n = c * h * w;
        &self.images.data()[i * n..(i + 1) * n]
    }

    /// Copies the listed images into a new set.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let (c, h, w) = self.image_shape();
        let mut data = Vec::with_capacity(indices.len() * c * h * w);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Self {
            images: Tensor::from_vec(&[indices.len(), c, h, w], data).expect("subset shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Augment {
    #[default]
    None,
    /// Zero-pad by `pad` pixels, take a random crop of the original size and
    /// mirror horizontally with probability 1/2.
    PadCropFlip { pad: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

/// Iterates over a set in mini-batches. The final batch may be smaller.
pub struct BatchIter<'a, T> {
    set: &'a ImageSet<T>,
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    augment: Augment,
    rng: Rng64,
}

impl<'a, T: Real> BatchIter<'a, T> {
    /// Sequential order, no augmentation.
    pub fn sequential(set: &'a ImageSet<T>, batch: usize) -> Self {
        Self {
            set,
            order: (0..set.len()).collect(),
            pos: 0,
            batch: batch.max(1),
            augment: Augment::None,
            rng: Rng64::new(0),
        }
    }

    /// Order reshuffled from `(seed, epoch)`, so every epoch sees a
    /// different but reproducible permutation.
    pub fn shuffled(set: &'a ImageSet<T>, batch: usize, seed: u64, epoch: usize, augment: Augment) -> Self {
        let mut order: Vec<usize> = (0..set.len()).collect();
        Rng64::from_parts(&[seed, epoch as u64, 0]).shuffle(&mut order);
        Self {
            set,
            order,
            pos: 0,
            batch: batch.max(1),
            augment,
            rng: Rng64::from_parts(&[seed, epoch as u64, 1]),
        }
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch)
    }
}

impl<T: Real> Iterator for BatchIter<'_, T> {
    type Item = Batch<T>;

    fn next(&mut self) -> Option<Batch<T>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let (c, h, w) = self.set.image_shape();
        let mut data = Vec::with_capacity(indices.len() * c * h * w);
        for &i in &indices {
            let img = self.set.image(i);
            match self.augment {
                Augment::None => data.extend_from_slice(img),
                Augment::PadCropFlip { pad } => {
                    let dy = self.rng.below(2 * pad + 1);
                    let dx = self.rng.below(2 * pad + 1);
                    let flip = self.rng.coin();
                    data.extend(pad_crop_flip(img, (c, h, w), pad, dy, dx, flip));
                }
            }
        }
        Some(Batch {
            images: Tensor::from_vec(&[indices.len(), c, h, w], data).expect("batch shape"),
            labels: indices.iter().map(|&i| self.set.labels[i]).collect(),
            indices,
        })
    }
}

/// Crop at offset `(dy, dx)` of the image zero-padded by `pad`, optionally
/// mirrored left to right.
pub fn pad_crop_flip<T: Real>(
    img: &[T],
    (c, h, w): (usize, usize, usize),
    pad: usize,
    dy: usize,
    dx: usize,
    flip: bool,
) -> Vec<T> {
    let mut out = alloc::vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + dy) as isize - pad as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = (x + dx) as isize - pad as isize;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                let ox = if flip { w - 1 - x } else { x };
                out[(ch * h + y) * w + ox] = img[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> ImageSet<f32> {
        let data = (0..n * 2 * 4 * 4).map(|v| v as f32).collect();
        ImageSet::new(Tensor::from_vec(&[n, 2, 4, 4], data).unwrap(), (0..n).collect()).unwrap()
    }

    #[test]
    fn partial_final_batch_is_kept() {
        let set = ramp(10);
        let sizes: Vec<usize> = BatchIter::sequential(&set, 4).map(|b| b.labels.len()).collect();
        assert_eq!(sizes, [4, 4, 2]);
    }

    #[test]
    fn shuffle_is_a_reproducible_permutation() {
        let set = ramp(25);
        let a: Vec<usize> = BatchIter::shuffled(&set, 8, 3, 0, Augment::None).flat_map(|b| b.indices).collect();
        let b: Vec<usize> = BatchIter::shuffled(&set, 8, 3, 0, Augment::None).flat_map(|b| b.indices).collect();
        let c: Vec<usize> = BatchIter::shuffled(&set, 8, 3, 1, Augment::None).flat_map(|b| b.indices).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..25).collect::<Vec<_>>());
    }

    #[test]
    fn batch_images_match_labels() {
        let set = ramp(7);
        for b in BatchIter::shuffled(&set, 3, 9, 2, Augment::None) {
            for (k, &i) in b.indices.iter().enumerate() {
                assert_eq!(b.labels[k], i);
                assert_eq!(&b.images.data()[k * 32..(k + 1) * 32], set.image(i));
            }
        }
    }

    #[test]
    fn centered_crop_without_flip_is_identity() {
        let set = ramp(1);
        let out = pad_crop_flip(set.image(0), (2, 4, 4), 4, 4, 4, false);
        assert_eq!(out, set.image(0));
    }

    #[test]
    fn flip_mirrors_rows() {
        let img: Vec<f32> = (0..4).map(|v| v as f32).collect();
        assert_eq!(pad_crop_flip(&img, (1, 1, 4), 0, 0, 0, true), [3.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn shifted_crop_moves_content_and_zero_fills() {
        let img: Vec<f32> = (1..=9).map(|v| v as f32).collect();
        // pad 1, offset (0,0): content shifts down-right by one
        let out = pad_crop_flip(&img, (1, 3, 3), 1, 0, 0, false);
        assert_eq!(out, [0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 4.0, 5.0]);
    }

    #[test]
    fn flip_frequency_is_near_half() {
        let n = 10_000;
        // asymmetric image: only the left column lit
        let mut data = alloc::vec![0.0f32; n * 4];
        for i in 0..n {
            data[i * 4] = 1.0;
        }
        let set = ImageSet::new(Tensor::from_vec(&[n, 1, 1, 4], data).unwrap(), alloc::vec![0; n]).unwrap();
        let flipped: usize = BatchIter::shuffled(&set, 256, 11, 0, Augment::PadCropFlip { pad: 0 })
            .map(|b| b.images.data().chunks(4).filter(|r| r[3] == 1.0).count())
            .sum();
        let rate = flipped as f64 / n as f64;
        assert!((rate - 0.5).abs() <= 0.02, "flip rate {}", rate);
    }
}
