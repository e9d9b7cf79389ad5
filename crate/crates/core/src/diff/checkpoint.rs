//! Checkpoint files: an 8-byte magic, a little-endian u64 header
//! length, a JSON header describing the parameter entries, then the
//! raw little-endian f64 blob. Entries are name-ordered, so identical
//! stores serialize to identical bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::params::ParameterStore;
use crate::diff::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PLPC0001";

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct EntryMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob that follows the header.
    pub offset: u64,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct CheckpointHeader {
    pub kind: String,
    pub config: serde_json::Value,
    pub vocab_hash: String,
    pub step: u64,
    pub entries: Vec<EntryMeta>,
}

pub fn save_checkpoint(
    path: &Path,
    kind: &str,
    config: &serde_json::Value,
    vocab_hash: &str,
    store: &ParameterStore,
) -> Result<()> {
    let mut entries = Vec::with_capacity(store.len());
    let mut blob = Vec::new();
    for (name, param) in store.iter() {
        let (rows, cols) = param.value.shape();
        entries.push(EntryMeta {
            name: name.to_string(),
            shape: vec![rows, cols],
            dtype: "f64".into(),
            offset: blob.len() as u64,
        });
        for &v in param.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        kind: kind.to_string(),
        config: config.clone(),
        vocab_hash: vocab_hash.to_string(),
        step: store.step(),
        entries,
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialization failed: {e}")))?;
    let mut out = Vec::with_capacity(16 + header_bytes.len() + blob.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&blob);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ParameterStore)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fail("missing checkpoint magic".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("slice is 8 bytes")) as usize;
    let blob_start = 16 + header_len;
    if bytes.len() < blob_start {
        return Err(fail("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..blob_start])
        .map_err(|e| fail(format!("bad header: {e}")))?;
    let blob = &bytes[blob_start..];
    let mut store = ParameterStore::new();
    for entry in &header.entries {
        if entry.dtype != "f64" {
            return Err(fail(format!(
                "entry {:?} has unsupported dtype {:?}",
                entry.name, entry.dtype
            )));
        }
        let [rows, cols] = entry.shape[..] else {
            return Err(fail(format!(
                "entry {:?} has non-matrix shape {:?}",
                entry.name, entry.shape
            )));
        };
        let count = rows * cols;
        let start = entry.offset as usize;
        let end = start + count * 8;
        if end > blob.len() {
            return Err(fail(format!("entry {:?} overruns the blob", entry.name)));
        }
        let data = blob[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")))
            .collect();
        store.insert(&entry.name, Tensor::new(rows, cols, data)?)?;
    }
    store.set_step(header.step);
    Ok((header, store))
}
