//! Checkpoint container. Integers and floats are little-endian.
//!
//! | size        | content                                             |
//! |-------------|-----------------------------------------------------|
//! | 8           | ASCII `WARNCKPT`                                    |
//! | 4           | format version, `1`                                 |
//! | 4           | manifest length `m` in bytes                        |
//! | `m`         | manifest, UTF-8 TOML (see below)                    |
//! | 4           | tensor count `t`                                    |
//! | repeated `t` times:                                               |
//! | 4           | name length `l`                                     |
//! | `l`         | name, UTF-8                                         |
//! | 1           | kind: 0 trainable parameter, 1 buffer               |
//! | 4           | rank `r`                                            |
//! | `4r`        | extents, `u32` each                                 |
//! | `4 * prod`  | values, IEEE-754 `f32`, row-major                   |
//!
//! The manifest has top-level keys `epoch` and `val_acc` and an `[arch]`
//! table with `labels`, `in_channels`, `input` and the `[arch.model]` and
//! `[arch.attention]` tables laid out like the run configuration sections
//! of the same names. Parameters precede buffers, each in creation order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use warn_core::models::Model;
use warn_core::{ParamStore, Tensor};

use crate::config::Architecture;
use crate::error::{read_file, write_file, Result, WarnError};

pub const MAGIC: &[u8; 8] = b"WARNCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub epoch: usize,
    pub val_acc: f64,
    pub arch: Architecture,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub store: ParamStore<f32>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode(manifest: &Manifest, store: &ParamStore<f32>) -> Vec<u8> {
    let text = toml::to_string(manifest).expect("manifest serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, text.len());
    out.extend_from_slice(text.as_bytes());
    put_u32(&mut out, store.params().len() + store.buffers().len());
    let tagged = store.params().iter().map(|n| (0u8, n)).chain(store.buffers().iter().map(|n| (1u8, n)));
    for (kind, named) in tagged {
        put_u32(&mut out, named.name.len());
        out.extend_from_slice(named.name.as_bytes());
        out.push(kind);
        put_u32(&mut out, named.tensor.rank());
        for &d in named.tensor.shape() {
            put_u32(&mut out, d);
        }
        for v in named.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(WarnError::format(self.what, self.bytes.len(), format!("truncated: need {} more bytes at {}", n, self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

/// A raw tensor record.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub buffer: bool,
    pub tensor: Tensor<f32>,
}

pub fn parse(bytes: &[u8], what: &str) -> Result<(Manifest, Vec<Record>)> {
    let mut r = Reader { bytes, pos: 0, what };
    if r.take(8)? != MAGIC {
        return Err(WarnError::format(what, 0, "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(WarnError::format(what, 8, format!("unsupported version {}", version)));
    }
    let m = r.u32()?;
    let at = r.pos;
    let text = std::str::from_utf8(r.take(m)?).map_err(|_| WarnError::format(what, at, "manifest is not UTF-8"))?;
    let manifest: Manifest = toml::from_str(text).map_err(|e| WarnError::format(what, at, format!("manifest: {}", e.message())))?;
    let count = r.u32()?;
    let mut records = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()?;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| WarnError::format(what, at, "tensor name is not UTF-8"))?
            .to_string();
        let at = r.pos;
        let buffer = match r.take(1)?[0] {
            0 => false,
            1 => true,
            k => return Err(WarnError::format(what, at, format!("unknown tensor kind {}", k))),
        };
        let rank = r.u32()?;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u32()?);
        }
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| WarnError::format(what, r.pos, "extents overflow"))?;
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| WarnError::format(what, r.pos, "extents overflow"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        records.push(Record {
            name,
            buffer,
            tensor: Tensor::from_vec(&dims, data)?,
        });
    }
    if r.pos != bytes.len() {
        return Err(WarnError::format(what, r.pos, "trailing bytes"));
    }
    Ok((manifest, records))
}

pub fn save(path: &Path, manifest: &Manifest, store: &ParamStore<f32>) -> Result<()> {
    write_file(path, &encode(manifest, store))
}

/// Reads a checkpoint and rebuilds its model. Every parameter and buffer of
/// the rebuilt model must be present with a matching shape.
pub fn load(path: &Path) -> Result<(Model, Checkpoint)> {
    let what = path.display().to_string();
    let (manifest, records) = parse(&read_file(path)?, &what)?;
    let (model, mut store) = Model::build::<f32>(&manifest.arch.model_config(), 0)?;
    let mut seen = 0;
    for rec in records {
        let slot = if rec.buffer {
            store.find_buffer(&rec.name).map(|id| &mut store.buffers_mut()[id.0].tensor)
        } else {
            store.find_param(&rec.name).map(|id| store.param_mut(id))
        };
        let Some(slot) = slot else {
            return Err(WarnError::format(&what, 0, format!("tensor `{}` does not belong to the model", rec.name)));
        };
        if slot.shape() != rec.tensor.shape() {
            return Err(WarnError::format(
                &what,
                0,
                format!("tensor `{}` has shape {:?}, model expects {:?}", rec.name, rec.tensor.shape(), slot.shape()),
            ));
        }
        *slot = rec.tensor;
        seen += 1;
    }
    let expected = store.params().len() + store.buffers().len();
    if seen != expected {
        return Err(WarnError::format(&what, 0, format!("{} of {} tensors present", seen, expected)));
    }
    Ok((model, Checkpoint { manifest, store }))
}
