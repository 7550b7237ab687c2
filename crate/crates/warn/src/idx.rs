//! IDX files, the distribution format of MNIST.
//!
//! Layout, all integers big-endian:
//!
//! | offset | size     | content                               |
//! |--------|----------|---------------------------------------|
//! | 0      | 2        | zero                                  |
//! | 2      | 1        | element type (`0x08` = unsigned byte)  |
//! | 3      | 1        | rank `r`                              |
//! | 4      | 4 * r    | extents, `u32` each                   |
//! | 4 + 4r | product  | row-major payload                     |
//!
//! Only unsigned-byte payloads are supported.

use std::path::Path;

use warn_core::Tensor;

use crate::error::{read_file, write_file, Result, WarnError};

pub const IDX_U8: u8 = 0x08;

/// A parsed unsigned-byte IDX array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    /// Values scaled to `[0, 1]` by `1/255`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let data = self.data.iter().map(|&b| b as f32 / 255.0).collect();
        Tensor::from_vec(&self.dims, data).expect("idx dims match payload")
    }
}

pub fn parse_idx(bytes: &[u8], what: &str) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(WarnError::format(what, bytes.len(), "file shorter than the 4-byte magic"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(WarnError::format(what, 0, "magic must start with two zero bytes"));
    }
    if bytes[2] != IDX_U8 {
        return Err(WarnError::format(what, 2, format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(WarnError::format(what, bytes.len(), format!("truncated header for rank {}", rank)));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let len = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let Some(len) = len else {
        return Err(WarnError::format(what, 4, "extents overflow"));
    };
    let have = bytes.len() - header;
    if have < len {
        return Err(WarnError::format(
            what,
            bytes.len(),
            format!("payload truncated: {} of {} bytes", have, len),
        ));
    }
    if have > len {
        return Err(WarnError::format(what, header + len, format!("{} trailing bytes", have - len)));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn encode_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&[0, 0, IDX_U8, array.dims.len() as u8]);
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    parse_idx(&read_file(path)?, &path.display().to_string())
}

pub fn write_idx(path: &Path, array: &IdxArray) -> Result<()> {
    write_file(path, &encode_idx(array))
}

/// Reads an IDX file as a tensor with values in `[0, 1]`.
pub fn load_idx(path: &Path) -> Result<Tensor<f32>> {
    Ok(read_idx(path)?.to_tensor())
}
