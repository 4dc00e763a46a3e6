//! Binary model checkpoints.
//!
//! Layout: the 8-byte magic `MTAGCKPT`, a `u32` format version and a `u64`
//! header length (both little-endian), the JSON header, then every tensor as
//! little-endian `f64` values in row-major order. Tensor offsets in the
//! header are byte offsets into that data block.

use std::path::{Path, PathBuf};

use methodtag_core::model::{ModelConfig, ModelParams};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"MTAGCKPT";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub data_len: u64,
}

pub fn encode(params: &ModelParams, config: &ModelConfig) -> Result<Vec<u8>, CheckpointError> {
    params
        .check_shapes(config)
        .map_err(|e| CheckpointError::Incompatible(e.to_string()))?;
    let mut tensors = Vec::new();
    let mut offset = 0u64;
    for (name, t) in params.named_tensors() {
        tensors.push(TensorEntry {
            name,
            rows: t.rows(),
            cols: t.cols(),
            offset,
        });
        offset += 8 * t.data().len() as u64;
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        tensors,
        data_len: offset,
    };
    let header_bytes = serde_json::to_vec(&header).expect("serializable header");
    let mut out = Vec::with_capacity(PREAMBLE + header_bytes.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes a whole checkpoint; nothing is returned unless every check passes.
pub fn decode(bytes: &[u8]) -> Result<(ModelParams, ModelConfig), CheckpointError> {
    if bytes.len() < PREAMBLE {
        return Err(CheckpointError::Truncated(format!("{} bytes, preamble needs {PREAMBLE}", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::Incompatible("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Incompatible(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let header_end = (PREAMBLE as u64)
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| CheckpointError::Truncated(format!("header of {header_len} bytes exceeds the file")))?
        as usize;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    if header.format_version != version {
        return Err(CheckpointError::Incompatible(format!(
            "header version {} disagrees with preamble version {version}",
            header.format_version
        )));
    }
    let data = &bytes[header_end..];
    if (data.len() as u64) < header.data_len {
        return Err(CheckpointError::Truncated(format!(
            "data block has {} of {} bytes",
            data.len(),
            header.data_len
        )));
    }
    if data.len() as u64 != header.data_len {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes after the data block",
            data.len() as u64 - header.data_len
        )));
    }

    let mut params = ModelParams::zeros(&header.config).map_err(|e| CheckpointError::Incompatible(e.to_string()))?;
    let expected = ModelParams::expected_shapes(&header.config);
    if expected.len() != header.tensors.len() {
        return Err(CheckpointError::Incompatible(format!(
            "{} tensors listed, config needs {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    for ((entry, (name, shape)), target) in header.tensors.iter().zip(&expected).zip(params.tensors_mut()) {
        if entry.name != *name || (entry.rows, entry.cols) != *shape {
            return Err(CheckpointError::Incompatible(format!(
                "tensor {} [{}×{}] where {name} {shape:?} was expected",
                entry.name, entry.rows, entry.cols
            )));
        }
        let len = 8 * (entry.rows * entry.cols) as u64;
        let end = entry
            .offset
            .checked_add(len)
            .filter(|&e| e <= header.data_len)
            .ok_or_else(|| CheckpointError::Corrupt(format!("tensor {name} runs past the data block")))?;
        let raw = &data[entry.offset as usize..end as usize];
        for (dst, chunk) in target.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    Ok((params, header.config))
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, config: &ModelConfig) -> Result<(), CheckpointError> {
    let bytes = encode(params, config)?;
    crate::formats::write_bytes(path, &bytes).map_err(|e| match e {
        crate::error::Error::Io { path, source } => CheckpointError::Io { path, source },
        other => CheckpointError::Corrupt(other.to_string()),
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, ModelConfig), CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
