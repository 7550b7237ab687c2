//! MNIST source digits and the generated-dataset cache.
//!
//! A cache file holds one split of a generated cluttered dataset. Integers
//! are little-endian.
//!
//! | offset | size        | content                                        |
//! |--------|-------------|------------------------------------------------|
//! | 0      | 8           | ASCII `WARNDSET`                               |
//! | 8      | 4           | format version, `1`                            |
//! | 12     | 8           | master seed                                    |
//! | 20     | 4           | distractors per image `D`                      |
//! | 24     | 12          | train, val and test split sizes, `u32` each     |
//! | 36     | 4           | split id: 0 train, 1 val, 2 test               |
//! | 40     | 4           | image count `n` (the split's size)             |
//! | 44     | 8           | FNV-1a 64 digest of the source digits          |
//! | 52     | 4           | canvas side `s` (40)                           |
//! | 56     | `n * s * s` | images, row-major `u8`, one after another      |
//! | ...    | `n`         | labels, one byte each                          |

use std::path::{Path, PathBuf};

use warn_core::batch::ImageSet;
use warn_core::clutter::{ClutterSource, DatasetSpec, DigitSet, Split, CANVAS};
use warn_core::{Real, Tensor};

use crate::error::{read_file, write_file, Result, WarnError};
use crate::idx::read_idx;

pub const MAGIC: &[u8; 8] = b"WARNDSET";
pub const VERSION: u32 = 1;
const HEADER: usize = 56;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

pub fn load_digits(images: &Path, labels: &Path) -> Result<DigitSet> {
    let im = read_idx(images)?;
    let lb = read_idx(labels)?;
    if im.dims.len() != 3 {
        return Err(WarnError::format(images.display().to_string(), 3, format!("expected rank 3, found {}", im.dims.len())));
    }
    if lb.dims.len() != 1 || lb.dims[0] != im.dims[0] {
        return Err(WarnError::format(
            labels.display().to_string(),
            4,
            format!("label extents {:?} do not match {} images", lb.dims, im.dims[0]),
        ));
    }
    if let Some(i) = lb.data.iter().position(|&l| l > 9) {
        return Err(WarnError::format(labels.display().to_string(), 8 + i, format!("label {} out of range", lb.data[i])));
    }
    Ok(DigitSet::new(im.dims[1], im.dims[2], im.data, lb.data)?)
}

/// Loads the four standard MNIST files from `dir`.
pub fn load_mnist(dir: &Path) -> Result<ClutterSource> {
    let train = load_digits(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS))?;
    let test = load_digits(&dir.join(TEST_IMAGES), &dir.join(TEST_LABELS))?;
    Ok(ClutterSource::new(train, test)?)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Digest identifying the source digits a cache was generated from.
pub fn source_digest(src: &ClutterSource) -> u64 {
    let (train, test) = src.digits();
    let mut h = fnv1a64(&train.pixels);
    for part in [&train.labels[..], &test.pixels[..], &test.labels[..]] {
        h = fnv1a64(&[&h.to_le_bytes()[..], part].concat());
    }
    h
}

/// One generated split.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitData {
    pub spec: DatasetSpec,
    pub split: Split,
    pub digest: u64,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_set<T: Real>(&self) -> ImageSet<T> {
        let n = self.len();
        let data = self.pixels.iter().map(|&p| T::from_f64(p as f64 / 255.0)).collect();
        let images = Tensor::from_vec(&[n, 1, CANVAS, CANVAS], data).expect("cache shape");
        ImageSet::new(images, self.labels.iter().map(|&l| l as usize).collect()).expect("cache labels")
    }
}

pub fn generate_split(src: &ClutterSource, spec: &DatasetSpec, split: Split) -> Result<SplitData> {
    spec.validate()?;
    let n = spec.size(split);
    let mut pixels = Vec::with_capacity(n * CANVAS * CANVAS);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let s = src.generate(spec, split, i)?;
        pixels.extend_from_slice(&s.pixels);
        labels.push(s.label);
    }
    Ok(SplitData {
        spec: spec.clone(),
        split,
        digest: source_digest(src),
        pixels,
        labels,
    })
}

fn u32_field(v: usize, name: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| WarnError::config(name, format!("{} does not fit in 32 bits", v)))
}

pub fn encode_split(data: &SplitData) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER + data.pixels.len() + data.labels.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&data.spec.seed.to_le_bytes());
    out.extend_from_slice(&u32_field(data.spec.distractors, "data.distractors")?.to_le_bytes());
    out.extend_from_slice(&u32_field(data.spec.train, "data.train")?.to_le_bytes());
    out.extend_from_slice(&u32_field(data.spec.val, "data.val")?.to_le_bytes());
    out.extend_from_slice(&u32_field(data.spec.test, "data.test")?.to_le_bytes());
    out.extend_from_slice(&(data.split as u32).to_le_bytes());
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    out.extend_from_slice(&data.digest.to_le_bytes());
    out.extend_from_slice(&(CANVAS as u32).to_le_bytes());
    out.extend_from_slice(&data.pixels);
    out.extend_from_slice(&data.labels);
    Ok(out)
}

pub fn parse_split(bytes: &[u8], what: &str) -> Result<SplitData> {
    if bytes.len() < HEADER {
        return Err(WarnError::format(what, bytes.len(), "truncated header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(WarnError::format(what, 0, "bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    if u32_at(8) as u32 != VERSION {
        return Err(WarnError::format(what, 8, format!("unsupported version {}", u32_at(8))));
    }
    let spec = DatasetSpec {
        seed: u64_at(12),
        distractors: u32_at(20),
        train: u32_at(24),
        val: u32_at(28),
        test: u32_at(32),
    };
    let split = match u32_at(36) {
        0 => Split::Train,
        1 => Split::Val,
        2 => Split::Test,
        s => return Err(WarnError::format(what, 36, format!("unknown split id {}", s))),
    };
    let n = u32_at(40);
    if n != spec.size(split) {
        return Err(WarnError::format(what, 40, format!("count {} disagrees with split size {}", n, spec.size(split))));
    }
    let side = u32_at(52);
    if side != CANVAS {
        return Err(WarnError::format(what, 52, format!("canvas side {} unsupported", side)));
    }
    let img_end = HEADER + n * side * side;
    if bytes.len() != img_end + n {
        return Err(WarnError::format(what, bytes.len(), format!("expected {} bytes", img_end + n)));
    }
    if let Some(i) = bytes[img_end..].iter().position(|&l| l > 9) {
        return Err(WarnError::format(what, img_end + i, "label out of range"));
    }
    Ok(SplitData {
        spec,
        split,
        digest: u64_at(44),
        pixels: bytes[HEADER..img_end].to_vec(),
        labels: bytes[img_end..].to_vec(),
    })
}

pub fn cache_path(dir: &Path, spec: &DatasetSpec, split: Split) -> PathBuf {
    dir.join(format!(
        "clutter-s{}-d{}-{}x{}x{}-{}.bin",
        spec.seed,
        spec.distractors,
        spec.train,
        spec.val,
        spec.test,
        split.name()
    ))
}

/// Reads the split from `cache_dir` if a matching file exists, otherwise
/// generates it and writes the cache. A cache whose header disagrees with
/// the request is regenerated.
pub fn load_or_generate(src: &ClutterSource, spec: &DatasetSpec, split: Split, cache_dir: Option<&Path>) -> Result<SplitData> {
    let Some(dir) = cache_dir else {
        return generate_split(src, spec, split);
    };
    let path = cache_path(dir, spec, split);
    let digest = source_digest(src);
    if path.exists() {
        let data = parse_split(&read_file(&path)?, &path.display().to_string())?;
        if data.spec == *spec && data.split == split && data.digest == digest {
            return Ok(data);
        }
    }
    let data = generate_split(src, spec, split)?;
    write_file(&path, &encode_split(&data)?)?;
    Ok(data)
}
