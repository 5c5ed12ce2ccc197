//! Checkpoint container.
//!
//! Layout: an 8-byte little-endian unsigned header length, a JSON header
//! mapping tensor name → `{dtype, shape, offset}`, then the payloads as
//! contiguous little-endian `f32` buffers. Offsets are byte positions
//! relative to the start of the payload section. Round-trips are bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TensorError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorMeta {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone)]
pub struct CheckpointEntry {
    pub shape: (usize, usize),
    pub values: Vec<f32>,
}

/// Write named tensors. Entries are laid out in name order, so identical
/// inputs produce identical files.
pub fn save_checkpoint(
    path: &Path,
    entries: &BTreeMap<String, CheckpointEntry>,
) -> Result<(), TensorError> {
    let mut header: BTreeMap<String, TensorMeta> = BTreeMap::new();
    let mut offset = 0u64;
    for (name, e) in entries {
        let n = e.shape.0 * e.shape.1;
        if n != e.values.len() {
            return Err(TensorError::Format(format!(
                "entry {name}: shape {:?} does not match {} values",
                e.shape,
                e.values.len()
            )));
        }
        header.insert(
            name.clone(),
            TensorMeta {
                dtype: "f32".to_string(),
                shape: vec![e.shape.0, e.shape.1],
                offset,
            },
        );
        offset += (n * 4) as u64;
    }
    let header_bytes = serde_json::to_vec(&header).map_err(|e| TensorError::Format(e.to_string()))?;

    let mut file = fs::File::create(path)?;
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    let mut payload = Vec::with_capacity(offset as usize);
    for e in entries.values() {
        for v in &e.values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    file.write_all(&payload)?;
    Ok(())
}

/// Read the header without the payloads.
pub fn read_header(path: &Path) -> Result<BTreeMap<String, TensorMeta>, TensorError> {
    let mut file = fs::File::open(path)?;
    let mut len_buf = [0u8; 8];
    file.read_exact(&mut len_buf)?;
    let header_len = u64::from_le_bytes(len_buf) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)?;
    serde_json::from_slice(&header_bytes).map_err(|e| TensorError::Format(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<BTreeMap<String, CheckpointEntry>, TensorError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 {
        return Err(TensorError::Format("file shorter than header length".to_string()));
    }
    let header_len = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let payload_start = 8 + header_len;
    if bytes.len() < payload_start {
        return Err(TensorError::Format("header extends past end of file".to_string()));
    }
    let header: BTreeMap<String, TensorMeta> = serde_json::from_slice(&bytes[8..payload_start])
        .map_err(|e| TensorError::Format(e.to_string()))?;
    let payload = &bytes[payload_start..];

    let mut out = BTreeMap::new();
    for (name, meta) in header {
        if meta.dtype != "f32" {
            return Err(TensorError::Format(format!(
                "entry {name}: unsupported dtype {}",
                meta.dtype
            )));
        }
        if meta.shape.len() != 2 {
            return Err(TensorError::Format(format!(
                "entry {name}: expected 2-d shape, got {:?}",
                meta.shape
            )));
        }
        let n = meta.shape[0] * meta.shape[1];
        let start = meta.offset as usize;
        let end = start + n * 4;
        if end > payload.len() {
            return Err(TensorError::Format(format!(
                "entry {name}: payload range {start}..{end} out of bounds"
            )));
        }
        let values = payload[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.insert(
            name,
            CheckpointEntry {
                shape: (meta.shape[0], meta.shape[1]),
                values,
            },
        );
    }
    Ok(out)
}
