//! CIFAR-10 binary batches: each record is one label byte followed by a
//! 32x32 red plane, green plane and blue plane (3072 bytes).

use std::path::Path;

use warn_core::batch::ImageSet;
use warn_core::Tensor;

use crate::error::{read_file, Result, WarnError};

pub const SIDE: usize = 32;
pub const PLANE: usize = SIDE * SIDE;
pub const RECORD: usize = 1 + 3 * PLANE;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

/// Raw records before normalization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawCifar {
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawCifar {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Parses concatenated records. `expected` is the record count the file
/// must hold, if known.
pub fn parse_records(bytes: &[u8], what: &str, expected: Option<usize>, out: &mut RawCifar) -> Result<()> {
    if bytes.len() % RECORD != 0 {
        let whole = bytes.len() / RECORD * RECORD;
        return Err(WarnError::format(
            what,
            whole,
            format!("{} bytes is not a whole number of {}-byte records", bytes.len(), RECORD),
        ));
    }
    let count = bytes.len() / RECORD;
    if let Some(n) = expected {
        if count != n {
            return Err(WarnError::format(what, 0, format!("expected {} records, found {}", n, count)));
        }
    }
    for (i, rec) in bytes.chunks_exact(RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(WarnError::format(what, i * RECORD, format!("label {} out of range", rec[0])));
        }
        out.labels.push(rec[0]);
        out.pixels.extend_from_slice(&rec[1..]);
    }
    Ok(())
}

pub fn read_records(path: &Path, expected: Option<usize>) -> Result<RawCifar> {
    let mut raw = RawCifar::default();
    parse_records(&read_file(path)?, &path.display().to_string(), expected, &mut raw)?;
    Ok(raw)
}

/// Per-channel mean and standard deviation of `[0,1]`-scaled pixels.
pub fn channel_stats(raw: &RawCifar) -> ([f64; 3], [f64; 3]) {
    let mut sum = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    for img in raw.pixels.chunks_exact(3 * PLANE) {
        for c in 0..3 {
            for &p in &img[c * PLANE..(c + 1) * PLANE] {
                let v = p as f64 / 255.0;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
    }
    let n = (raw.len() * PLANE).max(1) as f64;
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for c in 0..3 {
        mean[c] = sum[c] / n;
        std[c] = (sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt().max(1e-8);
    }
    (mean, std)
}

pub fn normalize(raw: &RawCifar, mean: [f64; 3], std: [f64; 3]) -> Result<ImageSet<f32>> {
    let mut data = Vec::with_capacity(raw.pixels.len());
    for img in raw.pixels.chunks_exact(3 * PLANE) {
        for c in 0..3 {
            data.extend(img[c * PLANE..(c + 1) * PLANE].iter().map(|&p| ((p as f64 / 255.0 - mean[c]) / std[c]) as f32));
        }
    }
    let images = Tensor::from_vec(&[raw.len(), 3, SIDE, SIDE], data)?;
    Ok(ImageSet::new(images, raw.labels.iter().map(|&l| l as usize).collect())?)
}

#[derive(Clone, Debug)]
pub struct Cifar10 {
    pub train: ImageSet<f32>,
    pub test: ImageSet<f32>,
    /// Training-split statistics applied to both splits.
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Loads the five training batches and the test batch from `dir`, each
/// holding 10000 records.
pub fn load_cifar10(dir: &Path) -> Result<Cifar10> {
    let mut train = RawCifar::default();
    for f in TRAIN_FILES {
        let p = dir.join(f);
        parse_records(&read_file(&p)?, &p.display().to_string(), Some(10_000), &mut train)?;
    }
    let test = read_records(&dir.join(TEST_FILE), Some(10_000))?;
    let (mean, std) = channel_stats(&train);
    Ok(Cifar10 {
        train: normalize(&train, mean, std)?,
        test: normalize(&test, mean, std)?,
        mean,
        std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, f: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend((0..3 * PLANE).map(f));
        r
    }

    #[test]
    fn two_hand_made_records() {
        let mut bytes = record(3, |i| (i % 251) as u8);
        bytes.extend(record(7, |i| (i / PLANE * 100) as u8));
        let mut raw = RawCifar::default();
        parse_records(&bytes, "t", Some(2), &mut raw).unwrap();
        assert_eq!(raw.labels, [3, 7]);
        let set = normalize(&raw, [0.0; 3], [1.0; 3]).unwrap();
        assert_eq!(set.images.shape(), &[2, 3, 32, 32]);
        assert_eq!(set.labels, [3, 7]);
        // second record, green plane, first pixel
        assert_eq!(set.images.at(&[1, 1, 0, 0]), 100.0 / 255.0);
        assert_eq!(set.images.at(&[0, 2, 0, 1]), ((2 * PLANE + 1) % 251) as f32 / 255.0);
    }

    #[test]
    fn normalized_training_split_is_centered() {
        let mut bytes = Vec::new();
        for k in 0..6u8 {
            bytes.extend(record(k, |i| ((i * 7 + k as usize * 31) % 256) as u8));
        }
        let mut raw = RawCifar::default();
        parse_records(&bytes, "t", None, &mut raw).unwrap();
        let (mean, std) = channel_stats(&raw);
        let set = normalize(&raw, mean, std).unwrap();
        for c in 0..3 {
            let mut s = 0.0f64;
            let mut q = 0.0f64;
            for n in 0..6 {
                for p in 0..PLANE {
                    let v = set.images.data()[(n * 3 + c) * PLANE + p] as f64;
                    s += v;
                    q += v * v;
                }
            }
            let m = s / (6 * PLANE) as f64;
            assert!(m.abs() < 1e-3, "channel {} mean {}", c, m);
            assert!((q / (6 * PLANE) as f64 - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn wrong_record_count_is_a_format_error() {
        let bytes = record(1, |_| 0);
        let mut raw = RawCifar::default();
        assert!(matches!(parse_records(&bytes, "t", Some(2), &mut raw), Err(WarnError::Format { .. })));
        assert!(matches!(parse_records(&bytes[..100], "t", None, &mut raw), Err(WarnError::Format { offset: 0, .. })));
    }
}
