//! Network checkpoint file format.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    4 bytes  "MILN"
//! version  u32      1
//! M        u32      feature dimension
//! K        u32      number of classes
//! n_hidden u32
//! hidden   n_hidden u32 widths
//! phi      u8       0 relu, 1 sigmoid, 2 softmax
//! dropout  f64
//! params   parameter matrices in declaration order, raw f64 values
//!          (shapes are implied by the header)
//! ```
//!
//! Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::rng::Rng;

use super::{MilNetwork, Mode, Phi};

pub const MAGIC: &[u8; 4] = b"MILN";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic at offset 0: expected \"MILN\", found {found:?}")]
    BadMagic { found: String },
    #[error("unsupported checkpoint version {found} at offset 4 (expected {VERSION})")]
    Version { found: u32 },
    #[error("truncated checkpoint: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("invalid checkpoint field at offset {offset}: {reason}")]
    Invalid { offset: usize, reason: String },
    #[error("io error for {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn encode(net: &MilNetwork) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.feature_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(net.num_classes() as u32).to_le_bytes());
    let hidden = net.hidden_dims();
    out.extend_from_slice(&(hidden.len() as u32).to_le_bytes());
    for width in &hidden {
        out.extend_from_slice(&(*width as u32).to_le_bytes());
    }
    out.push(match net.phi {
        Phi::Relu => 0,
        Phi::Sigmoid => 1,
        Phi::Softmax => 2,
    });
    out.extend_from_slice(&net.dropout_rate.to_le_bytes());
    for param in net.params() {
        for &value in param.data() {
            out.extend_from_slice(&value.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<MilNetwork, CheckpointError> {
    let mut offset = 0usize;
    let take = |offset: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
        if *offset + n > bytes.len() {
            return Err(CheckpointError::Truncated { offset: *offset, needed: n, len: bytes.len() });
        }
        let slice = &bytes[*offset..*offset + n];
        *offset += n;
        Ok(slice)
    };

    let magic = take(&mut offset, 4)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic {
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = u32::from_le_bytes(take(&mut offset, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let feature_dim = u32::from_le_bytes(take(&mut offset, 4)?.try_into().unwrap()) as usize;
    let num_classes = u32::from_le_bytes(take(&mut offset, 4)?.try_into().unwrap()) as usize;
    let n_hidden = u32::from_le_bytes(take(&mut offset, 4)?.try_into().unwrap()) as usize;
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(u32::from_le_bytes(take(&mut offset, 4)?.try_into().unwrap()) as usize);
    }
    let phi_offset = offset;
    let phi = match take(&mut offset, 1)?[0] {
        0 => Phi::Relu,
        1 => Phi::Sigmoid,
        2 => Phi::Softmax,
        other => {
            return Err(CheckpointError::Invalid {
                offset: phi_offset,
                reason: format!("unknown phi tag {other}"),
            })
        }
    };
    let dropout_offset = offset;
    let dropout = f64::from_le_bytes(take(&mut offset, 8)?.try_into().unwrap());
    if !(0.0..1.0).contains(&dropout) {
        return Err(CheckpointError::Invalid {
            offset: dropout_offset,
            reason: format!("dropout {dropout} outside [0, 1)"),
        });
    }

    // Architecture header fully determines parameter shapes; build a
    // skeleton and fill it in declaration order.
    let mut seed_rng = Rng::new(0);
    let mut net = MilNetwork::init(feature_dim, num_classes, &hidden, dropout, phi, &mut seed_rng)
        .map_err(|e| CheckpointError::Invalid { offset: 8, reason: e.to_string() })?;
    for param in net.params_mut() {
        let n = param.rows() * param.cols();
        let raw = take(&mut offset, 8 * n)?;
        for (value, chunk) in param.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *value = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if offset != bytes.len() {
        return Err(CheckpointError::Invalid {
            offset,
            reason: format!("{} trailing bytes after parameters", bytes.len() - offset),
        });
    }
    net.set_mode(Mode::Eval);
    Ok(net)
}

pub fn write_checkpoint(net: &MilNetwork, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, encode(net))
        .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<MilNetwork, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path)
        .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    decode(&bytes)
}
