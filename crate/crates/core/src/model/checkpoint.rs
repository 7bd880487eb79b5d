//! Binary checkpoint container.
//!
//! Layout: `FMTMT1`, a little-endian `u64` header length, a JSON header
//! (format version, model config, vocabularies, normalization settings and a
//! tensor manifest), the tensors as little-endian `f64` in manifest order,
//! and a little-endian CRC-32 of every preceding byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::Parameters;
use super::vocab::Vocabulary;
use super::ModelConfig;
use crate::textnorm::NormalizationConfig;

pub const MAGIC: &[u8; 6] = b"FMTMT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Everything needed to decode: config, weights, vocabularies and the text
/// normalization the vocabularies were built with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Parameters,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub norm: NormalizationConfig,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    normalization: NormalizationConfig,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            src_vocab: self.src_vocab.clone(),
            tgt_vocab: self.tgt_vocab.clone(),
            normalization: self.norm.clone(),
            tensors: self
                .params
                .names()
                .into_iter()
                .zip(self.params.tensors())
                .map(|(name, t)| TensorEntry {
                    name,
                    shape: [t.nrows(), t.ncols()],
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + self.params.num_scalars() * 8 + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.params.tensors() {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }
}

/// CRC-32 stored in the trailer, without validating the rest of the file.
pub fn stored_checksum(bytes: &[u8]) -> Option<u32> {
    let tail: [u8; 4] = bytes.get(bytes.len().checked_sub(4)?..)?.try_into().ok()?;
    Some(u32::from_le_bytes(tail))
}

pub fn write_checkpoint<W: Write>(mut w: W, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    w.write_all(&checkpoint.to_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let corrupt = |msg: &str| CheckpointError::Corrupt(msg.to_string());
    if bytes.len() < MAGIC.len() + 8 + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("missing magic bytes"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checksum mismatch"));
    }
    let len_end = MAGIC.len() + 8;
    let header_len = u64::from_le_bytes(body[MAGIC.len()..len_end].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|l| len_end.checked_add(l))
        .filter(|&end| end <= body.len())
        .ok_or_else(|| corrupt("header length exceeds file"))?;
    let value: serde_json::Value = serde_json::from_slice(&body[len_end..header_end])
        .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt("header has no format_version"))? as u32;
    if found != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found,
            expected: FORMAT_VERSION,
        });
    }
    let header: Header = serde_json::from_value(value).map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    header
        .config
        .validate()
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    if header.config.src_vocab_size != header.src_vocab.len() || header.config.tgt_vocab_size != header.tgt_vocab.len()
    {
        return Err(corrupt("vocabulary sizes disagree with config"));
    }

    let mut params = Parameters::zeros(&header.config);
    let names = params.names();
    if names.len() != header.tensors.len() {
        return Err(corrupt("tensor manifest does not match config"));
    }
    let mut data = &body[header_end..];
    for ((tensor, name), entry) in params.tensors_mut().into_iter().zip(&names).zip(&header.tensors) {
        if &entry.name != name || entry.shape != [tensor.nrows(), tensor.ncols()] {
            return Err(CheckpointError::Corrupt(format!("unexpected tensor {}", entry.name)));
        }
        let n = tensor.len() * 8;
        if data.len() < n {
            return Err(corrupt("tensor data truncated"));
        }
        for (v, chunk) in tensor.iter_mut().zip(data[..n].chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        data = &data[n..];
    }
    if !data.is_empty() {
        return Err(corrupt("trailing bytes after tensor data"));
    }
    Ok(Checkpoint {
        config: header.config,
        params,
        src_vocab: header.src_vocab,
        tgt_vocab: header.tgt_vocab,
        norm: header.normalization,
    })
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    read_checkpoint(&fs::read(path)?)
}
