//! Checkpoint persistence.
//!
//! Layout: an 8-byte magic, a little-endian u64 manifest length, the JSON
//! manifest (format version, kind, config snapshot, vocabulary, named tensor
//! index with byte offsets), then the raw little-endian f64 payloads. Tensor
//! round-trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::numerics::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"PMMCKPT\x01";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt checkpoint payload: {0}")]
    CorruptPayload(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

/// What kind of model a checkpoint carries.
pub const KIND_PRETRAINED: &str = "pretrained";
pub const KIND_FINETUNED: &str = "finetuned";

/// Checkpoint-level metadata (everything except the tensors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub config: RunConfig,
    pub vocab: Vec<String>,
    /// Modality of a finetuned model ("1d" | "3d" | "both").
    pub modality: Option<String>,
    /// Dataset name a finetuned model was trained on.
    pub dataset: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    /// Byte offset into the payload section.
    offset: u64,
    /// Payload length in bytes.
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    #[serde(flatten)]
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

/// Serializes parameters + metadata. Byte-identical output for identical
/// inputs: tensors are written in sorted name order.
pub fn save_checkpoint(path: &Path, params: &ParamStore, meta: &CheckpointMeta) -> Result<()> {
    let mut tensors = Vec::with_capacity(params.len());
    let mut payload: Vec<u8> = Vec::with_capacity(params.total_elements() * 8);
    for (name, tensor) in params.iter() {
        let offset = payload.len() as u64;
        for &x in tensor.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.to_string(),
            dtype: "f64".into(),
            shape: tensor.shape().to_vec(),
            offset,
            len: (tensor.len() * 8) as u64,
        });
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        meta: meta.clone(),
        tensors,
    };
    let manifest_json = serde_json::to_vec(&manifest).expect("manifest serializes");

    let mut bytes = Vec::with_capacity(16 + manifest_json.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(manifest_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&manifest_json);
    bytes.extend_from_slice(&payload);
    fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a checkpoint, verifying magic, version, and payload geometry.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, ParamStore)> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::VersionMismatch(
            "not a polymm checkpoint (bad magic)".into(),
        ));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload_start = 16usize
        .checked_add(manifest_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| CheckpointError::CorruptPayload("manifest length overruns file".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..payload_start])
        .map_err(|e| CheckpointError::CorruptPayload(format!("manifest: {e}")))?;
    if manifest.version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch(format!(
            "format version {} (supported: {FORMAT_VERSION})",
            manifest.version
        )));
    }
    let payload = &bytes[payload_start..];

    let mut expected_end = 0u64;
    let mut params = ParamStore::new();
    for entry in &manifest.tensors {
        if entry.dtype != "f64" {
            return Err(CheckpointError::CorruptPayload(format!(
                "tensor {} has unsupported dtype {}",
                entry.name, entry.dtype
            )));
        }
        let elements: usize = entry.shape.iter().product();
        if entry.len != (elements * 8) as u64 {
            return Err(CheckpointError::CorruptPayload(format!(
                "tensor {}: length {} disagrees with shape {:?}",
                entry.name, entry.len, entry.shape
            )));
        }
        let start = entry.offset as usize;
        let end = start
            .checked_add(entry.len as usize)
            .filter(|&e| e <= payload.len())
            .ok_or_else(|| {
                CheckpointError::CorruptPayload(format!(
                    "tensor {} overruns payload ({} bytes)",
                    entry.name,
                    payload.len()
                ))
            })?;
        expected_end = expected_end.max(end as u64);
        let mut data = Vec::with_capacity(elements);
        for chunk in payload[start..end].chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        params.insert(&entry.name, Tensor::new(entry.shape.clone(), data));
    }
    if expected_end != payload.len() as u64 {
        return Err(CheckpointError::CorruptPayload(format!(
            "payload has {} bytes but tensors cover {expected_end}",
            payload.len()
        )));
    }
    Ok((manifest.meta, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("b.w", Tensor::new(vec![2, 2], vec![1.5, -2.25, 1e-300, 42.0]));
        s.insert("a.v", Tensor::new(vec![3], vec![0.1, 0.2, -0.3]));
        s
    }

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            kind: KIND_PRETRAINED.into(),
            config: RunConfig::default(),
            vocab: vec!["[PAD]".into(), "[CLS]".into(), "[SEP]".into(), "[MASK]".into(), "[UNK]".into(), "C".into()],
            modality: None,
            dataset: None,
        }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let store = sample_store();
        save_checkpoint(&path, &store, &meta()).unwrap();
        let (m, loaded) = load_checkpoint(&path).unwrap();
        assert_eq!(m, meta());
        assert!(loaded.bitwise_eq(&store));
    }

    #[test]
    fn saves_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
        save_checkpoint(&p1, &sample_store(), &meta()).unwrap();
        save_checkpoint(&p2, &sample_store(), &meta()).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        save_checkpoint(&path, &sample_store(), &meta()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::CorruptPayload(_))
        ));
    }

    #[test]
    fn bad_magic_is_version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxxxxxx").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::VersionMismatch(_))
        ));
    }

    #[test]
    fn future_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let store = sample_store();
        save_checkpoint(&path, &store, &meta()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Bump the "version":1 field inside the manifest JSON.
        let needle = b"\"version\":1";
        let pos = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        bytes[pos + needle.len() - 1] = b'9';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::VersionMismatch(_))
        ));
    }
}
