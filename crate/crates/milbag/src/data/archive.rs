//! The bag-archive file format.
//!
//! Little-endian layout:
//!
//! ```text
//! magic   4 bytes  "MILB"
//! version u32      1
//! K       u32      number of classes
//! M       u32      feature dimension
//! N       u64      number of bags
//! N records:
//!     id_len   u32
//!     id       id_len bytes UTF-8
//!     L        u32            instances in this bag
//!     label    ceil(K/8) bytes, class k = bit k%8 of byte k/8, LSB-first
//!     features L*M f32, row-major
//! index   N u64    absolute offset of each record
//! footer  u64      absolute offset of the index block
//! ```
//!
//! Features are stored as `f32`; in-memory datasets that originate from this
//! crate only ever hold f32-representable feature values, so write/read
//! round-trips reproduce the dataset exactly and writing the same dataset
//! twice yields byte-identical files.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{Bag, Dataset};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"MILB";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("bad magic at offset 0: expected \"MILB\", found {found:?}")]
    BadMagic { found: String },
    #[error("unsupported version {found} at offset 4 (expected {VERSION})")]
    Version { found: u32 },
    #[error("truncated file: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("invalid record at offset {offset}: {reason}")]
    InvalidRecord { offset: usize, reason: String },
    #[error("invalid index: {reason} (offset {offset})")]
    InvalidIndex { offset: usize, reason: String },
    #[error("io error for {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, offset: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ArchiveError> {
        if self.offset + n > self.bytes.len() {
            return Err(ArchiveError::Truncated {
                offset: self.offset,
                needed: n,
                len: self.bytes.len(),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ArchiveError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, ArchiveError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn label_bitmap(label: &[bool]) -> Vec<u8> {
    let mut bytes = vec![0u8; label.len().div_ceil(8)];
    for (k, &set) in label.iter().enumerate() {
        if set {
            bytes[k / 8] |= 1 << (k % 8);
        }
    }
    bytes
}

pub fn encode(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.num_classes() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.feature_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());

    let mut offsets = Vec::with_capacity(ds.len());
    for bag in ds.bags() {
        offsets.push(out.len() as u64);
        out.extend_from_slice(&(bag.id.len() as u32).to_le_bytes());
        out.extend_from_slice(bag.id.as_bytes());
        out.extend_from_slice(&(bag.num_instances() as u32).to_le_bytes());
        out.extend_from_slice(&label_bitmap(&bag.label));
        for &v in bag.instances.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }

    let index_offset = out.len() as u64;
    for off in offsets {
        out.extend_from_slice(&off.to_le_bytes());
    }
    out.extend_from_slice(&index_offset.to_le_bytes());
    out
}

pub fn decode(bytes: &[u8]) -> Result<Dataset, ArchiveError> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(ArchiveError::BadMagic { found: String::from_utf8_lossy(magic).into_owned() });
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(ArchiveError::Version { found: version });
    }
    let num_classes = cur.u32()? as usize;
    let feature_dim = cur.u32()? as usize;
    let n = cur.u64()? as usize;

    if bytes.len() < 8 {
        return Err(ArchiveError::Truncated { offset: 0, needed: 8, len: bytes.len() });
    }
    let footer_offset = bytes.len() - 8;
    let index_offset = u64::from_le_bytes(bytes[footer_offset..].try_into().unwrap()) as usize;
    let expected_index_end = index_offset + 8 * n;
    if expected_index_end != footer_offset {
        return Err(ArchiveError::InvalidIndex {
            offset: footer_offset,
            reason: format!(
                "index at {index_offset} with {n} entries should end at the footer ({footer_offset})"
            ),
        });
    }

    let mut index = Vec::with_capacity(n);
    {
        let mut icur = Cursor::new(bytes);
        icur.offset = index_offset;
        for _ in 0..n {
            index.push(icur.u64()? as usize);
        }
    }

    let mut bags = Vec::with_capacity(n);
    let label_bytes = num_classes.div_ceil(8);
    for &record_offset in &index {
        if record_offset >= index_offset {
            return Err(ArchiveError::InvalidIndex {
                offset: record_offset,
                reason: "record offset points past the data section".into(),
            });
        }
        let mut cur = Cursor::new(bytes);
        cur.offset = record_offset;

        let id_offset = cur.offset;
        let id_len = cur.u32()? as usize;
        let id = std::str::from_utf8(cur.take(id_len)?)
            .map_err(|e| ArchiveError::InvalidRecord {
                offset: id_offset,
                reason: format!("id is not UTF-8: {e}"),
            })?
            .to_owned();
        let instances_offset = cur.offset;
        let instances = cur.u32()? as usize;
        if instances == 0 {
            return Err(ArchiveError::InvalidRecord {
                offset: instances_offset,
                reason: "bag has zero instances".into(),
            });
        }
        let bitmap = cur.take(label_bytes)?;
        let label: Vec<bool> = (0..num_classes).map(|k| bitmap[k / 8] >> (k % 8) & 1 == 1).collect();
        let mut data = Vec::with_capacity(instances * feature_dim);
        for _ in 0..instances * feature_dim {
            data.push(cur.f32()? as f64);
        }
        let instances = Matrix::from_vec(instances, feature_dim, data).map_err(|e| {
            ArchiveError::InvalidRecord { offset: record_offset, reason: e.to_string() }
        })?;
        bags.push(Bag { id, instances, label });
    }

    Dataset::new(num_classes, feature_dim, bags)
        .map_err(|e| ArchiveError::InvalidRecord { offset: 0, reason: e.to_string() })
}

pub fn write_archive(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), ArchiveError> {
    let path = path.as_ref();
    fs::write(path, encode(ds))
        .map_err(|source| ArchiveError::Io { path: path.display().to_string(), source })
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<Dataset, ArchiveError> {
    let path = path.as_ref();
    let bytes = fs::read(path)
        .map_err(|source| ArchiveError::Io { path: path.display().to_string(), source })?;
    decode(&bytes)
}

/// Header and label statistics, as printed by the `inspect` subcommand.
#[derive(Debug, Clone)]
pub struct ArchiveSummary {
    pub version: u32,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub num_bags: usize,
    pub class_counts: Vec<usize>,
    pub min_instances: usize,
    pub max_instances: usize,
}

pub fn summarize(ds: &Dataset) -> ArchiveSummary {
    let (mut min_l, mut max_l) = (usize::MAX, 0);
    for bag in ds.bags() {
        min_l = min_l.min(bag.num_instances());
        max_l = max_l.max(bag.num_instances());
    }
    if ds.is_empty() {
        min_l = 0;
    }
    ArchiveSummary {
        version: VERSION,
        num_classes: ds.num_classes(),
        feature_dim: ds.feature_dim(),
        num_bags: ds.len(),
        class_counts: ds.class_counts(),
        min_instances: min_l,
        max_instances: max_l,
    }
}
