//! Checkpoint file format.
//!
//! Layout: magic `BTCNN`, version byte 0x01, a 4-byte little-endian header
//! length, a UTF-8 JSON header, then every parameter as little-endian f64 in
//! architecture order (per conv layer: weights [filter][channel][row][col]
//! then bias; per dense layer: weights [out][in] then bias).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{build_architecture, param_count, LayerKind, ModelParams};
use crate::preprocess::Variant;

pub const MAGIC: &[u8; 5] = b"BTCNN";
pub const VERSION: u8 = 0x01;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes; not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0:#04x}")]
    VersionUnsupported(u8),
    #[error("malformed checkpoint header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("checkpoint metadata mismatch: {0}")]
    MetadataMismatch(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

/// JSON header carried by every checkpoint. `split_seed` lets evaluation
/// rebuild the exact train/validation/test partition used at training time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub input_size: usize,
    pub variant: String,
    pub class_names: Vec<String>,
    pub layer_spec: Vec<LayerKind>,
    pub split_seed: u64,
}

impl CheckpointMeta {
    pub fn for_params(params: &ModelParams, variant: Variant, split_seed: u64) -> CheckpointMeta {
        CheckpointMeta {
            format_version: VERSION as u32,
            input_size: params.spec.input_side,
            variant: variant.name().to_string(),
            class_names: crate::dataset::CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            layer_spec: params.spec.layers.clone(),
            split_seed,
        }
    }

    pub fn variant(&self) -> Result<Variant, CheckpointError> {
        Variant::parse(&self.variant).ok_or_else(|| {
            CheckpointError::MetadataMismatch(format!("unknown variant {:?}", self.variant))
        })
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
}

pub fn encode(params: &ModelParams, meta: &CheckpointMeta) -> Result<Vec<u8>, CheckpointError> {
    if meta.input_size != params.spec.input_side || meta.layer_spec != params.spec.layers {
        return Err(CheckpointError::MetadataMismatch(format!(
            "metadata written for input size {}, parameters built for {}",
            meta.input_size, params.spec.input_side
        )));
    }
    meta.variant()?;
    let header = serde_json::to_string(meta)
        .map_err(|e| CheckpointError::MalformedHeader(e.to_string()))?;
    let flat = params.to_flat();
    let mut bytes = Vec::with_capacity(10 + header.len() + flat.len() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.push(VERSION);
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    for v in flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    Ok(bytes)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut pos = MAGIC.len();
    let version = *bytes
        .get(pos)
        .ok_or(CheckpointError::MalformedHeader("missing version byte".into()))?;
    if version != VERSION {
        return Err(CheckpointError::VersionUnsupported(version));
    }
    pos += 1;
    if bytes.len() < pos + 4 {
        return Err(CheckpointError::MalformedHeader("missing header length".into()));
    }
    let header_len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
    pos += 4;
    if bytes.len() < pos + header_len {
        return Err(CheckpointError::MalformedHeader(format!(
            "header runs past end of file ({} declared, {} available)",
            header_len,
            bytes.len() - pos
        )));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[pos..pos + header_len])
        .map_err(|e| CheckpointError::MalformedHeader(e.to_string()))?;
    pos += header_len;

    let spec = build_architecture(meta.input_size, meta.class_names.len())
        .map_err(|e| CheckpointError::MetadataMismatch(e.to_string()))?;
    if spec.layers != meta.layer_spec {
        return Err(CheckpointError::MetadataMismatch(
            "stored layer spec differs from the canonical architecture for this input size".into(),
        ));
    }
    meta.variant()?;

    let expected = param_count(&spec) * 8;
    let payload = &bytes[pos..];
    if payload.len() != expected {
        return Err(CheckpointError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let params = ModelParams::from_flat(&spec, &flat)
        .map_err(|e| CheckpointError::MetadataMismatch(e.to_string()))?;
    Ok(Checkpoint { meta, params })
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, meta: &CheckpointMeta) -> Result<(), CheckpointError> {
    Ok(fs::write(path, encode(params, meta)?)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn sample(side: usize, seed: u64) -> (ModelParams, CheckpointMeta) {
        let spec = build_architecture(side, 3).unwrap();
        let params = init_params(&spec, seed);
        let meta = CheckpointMeta::for_params(&params, Variant::Cropped, 42);
        (params, meta)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for side in [32, 64, 128] {
            let (params, meta) = sample(side, side as u64);
            let bytes = encode(&params, &meta).unwrap();
            let ck = decode(&bytes).unwrap();
            assert_eq!(ck.meta, meta);
            assert_eq!(ck.params.to_flat(), params.to_flat());
            // re-encode reproduces identical bytes
            assert_eq!(encode(&ck.params, &ck.meta).unwrap(), bytes);
        }
    }

    #[test]
    fn flipped_first_byte_is_bad_magic() {
        let (params, meta) = sample(32, 1);
        let mut bytes = encode(&params, &meta).unwrap();
        bytes[0] ^= 0xFF;
        assert!(matches!(decode(&bytes), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn shortened_payload_is_truncated() {
        let (params, meta) = sample(32, 1);
        let mut bytes = encode(&params, &meta).unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(
            decode(&bytes),
            Err(CheckpointError::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let (params, meta) = sample(32, 1);
        let mut bytes = encode(&params, &meta).unwrap();
        bytes[5] = 0x02;
        assert!(matches!(
            decode(&bytes),
            Err(CheckpointError::VersionUnsupported(0x02))
        ));
    }

    #[test]
    fn tampered_layer_spec_is_metadata_mismatch() {
        let (params, mut meta) = sample(32, 1);
        meta.layer_spec.pop();
        assert!(matches!(
            encode(&params, &meta),
            Err(CheckpointError::MetadataMismatch(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("model.ckpt");
        let (params, meta) = sample(32, 9);
        save_checkpoint(&path, &params, &meta).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.params.to_flat(), params.to_flat());
        assert_eq!(ck.meta.split_seed, 42);
    }
}
