//! Reader and writer for the classic IDX container (unsigned-byte payloads
//! only): a big-endian magic word, one big-endian `u32` per dimension, then
//! the raw bytes in row-major order.

use std::path::Path;

use super::{Dataset, Domain};
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

const MAGIC_LABELS: u32 = 0x0000_0801;
const MAGIC_IMAGES: u32 = 0x0000_0803;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxKind {
    /// One dimension: a label per example.
    Labels,
    /// Three dimensions: count × rows × cols.
    Images,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub kind: IdxKind,
    pub dims: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl IdxArray {
    pub fn new(kind: IdxKind, dims: Vec<usize>, bytes: Vec<u8>) -> Result<Self> {
        let want = match kind {
            IdxKind::Labels => 1,
            IdxKind::Images => 3,
        };
        if dims.len() != want || dims.iter().product::<usize>() != bytes.len() {
            return Err(Error::Contract(format!(
                "{kind:?} need {want} dims whose product matches {} bytes, got {dims:?}",
                bytes.len()
            )));
        }
        Ok(IdxArray { kind, dims, bytes })
    }

    /// Examples as rows scaled to `[0, 1]` by `/255`. Images are flattened.
    pub fn to_tensor(&self) -> Tensor {
        let rows = self.dims[0];
        let cols = self.bytes.len().checked_div(rows).unwrap_or(0);
        let data = self.bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Tensor::matrix(rows, cols, data).expect("idx shape")
    }

    pub fn labels(&self) -> Vec<usize> {
        self.bytes.iter().map(|&b| usize::from(b)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let magic = match self.kind {
            IdxKind::Labels => MAGIC_LABELS,
            IdxKind::Images => MAGIC_IMAGES,
        };
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.bytes.len());
        out.extend_from_slice(&magic.to_be_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.bytes);
        out
    }
}

fn format_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        offset,
        detail: detail.into(),
    }
}

pub fn read_idx_bytes(raw: &[u8]) -> Result<IdxArray> {
    if raw.len() < 4 {
        return Err(format_err(
            raw.len(),
            format!("truncated magic: expected 4 bytes, found {}", raw.len()),
        ));
    }
    let magic = u32::from_be_bytes([raw[0], raw[1], raw[2], raw[3]]);
    let (kind, ndims) = match magic {
        MAGIC_LABELS => (IdxKind::Labels, 1),
        MAGIC_IMAGES => (IdxKind::Images, 3),
        other => {
            return Err(format_err(
                0,
                format!("bad magic 0x{other:08x}, expected 0x{MAGIC_LABELS:08x} or 0x{MAGIC_IMAGES:08x}"),
            ))
        }
    };
    let header_len = 4 + 4 * ndims;
    if raw.len() < header_len {
        return Err(format_err(
            raw.len(),
            format!("truncated header: expected {header_len} bytes, found {}", raw.len()),
        ));
    }
    let dims: Vec<usize> = raw[4..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err(4, format!("dimension product overflows: {dims:?}")))?;
    let actual = raw.len() - header_len;
    if actual < expected {
        return Err(format_err(
            raw.len(),
            format!("truncated payload: expected {expected} bytes after the header, found {actual}"),
        ));
    }
    if actual > expected {
        return Err(format_err(
            header_len + expected,
            format!("{} trailing bytes after a {expected}-byte payload", actual - expected),
        ));
    }
    Ok(IdxArray {
        kind,
        dims,
        bytes: raw[header_len..].to_vec(),
    })
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxArray> {
    read_idx_bytes(&std::fs::read(path)?)
}

pub fn write_idx(path: impl AsRef<Path>, array: &IdxArray) -> Result<()> {
    std::fs::write(path, array.to_bytes())?;
    Ok(())
}

/// Pair an image file with a label file. The result lives in `[0, 1]` with a
/// base budget of 8/255.
pub fn load_idx_dataset(images: impl AsRef<Path>, labels: impl AsRef<Path>, classes: usize) -> Result<Dataset> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if img.kind != IdxKind::Images || lab.kind != IdxKind::Labels {
        return Err(Error::Contract("expected an image file and a label file".into()));
    }
    if img.dims[0] != lab.dims[0] {
        return Err(Error::Contract(format!("{} images but {} labels", img.dims[0], lab.dims[0])));
    }
    if img.dims[0] == 0 {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(img.to_tensor(), lab.labels(), classes, Domain::Box01, "idx", 8.0 / 255.0)
}
