//! Checkpoint format: a UTF-8 JSON manifest (shapes, names, dtype, byte
//! offsets, model config) plus one little-endian f64 binary blob. Round-trips
//! are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{param_order, ModelParams, SwitchConfig};
use crate::tensor::Tensor;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob.
    offset: u64,
    /// Element count.
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    v: u32,
    dtype: String,
    byte_order: String,
    config: SwitchConfig,
    tensors: Vec<TensorEntry>,
}

const MANIFEST_FILE: &str = "manifest.json";
const BLOB_FILE: &str = "params.bin";

/// Write `params` under directory `dir` as `manifest.json` + `params.bin`.
pub fn save_checkpoint(dir: &Path, params: &ModelParams, cfg: &SwitchConfig) -> Result<()> {
    params.validate_shapes(cfg)?;
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    for (id, tensor) in params.named(cfg) {
        entries.push(TensorEntry {
            name: id.to_string(),
            shape: tensor.shape().to_vec(),
            offset: blob.len() as u64,
            len: tensor.len() as u64,
        });
        for v in tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        v: 1,
        dtype: "f64".into(),
        byte_order: "le".into(),
        config: cfg.clone(),
        tensors: entries,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(dir.join(BLOB_FILE), blob)?;
    Ok(())
}

/// Load a checkpoint directory, returning the parameters and their config.
pub fn load_checkpoint(dir: &Path) -> Result<(ModelParams, SwitchConfig)> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.v != 1 {
        return Err(Error::Checkpoint(format!("unsupported version {}", manifest.v)));
    }
    if manifest.dtype != "f64" || manifest.byte_order != "le" {
        return Err(Error::Checkpoint(format!(
            "unsupported encoding {}/{}",
            manifest.dtype, manifest.byte_order
        )));
    }
    let blob = fs::read(dir.join(BLOB_FILE))?;
    let cfg = manifest.config;
    let order = param_order(&cfg);
    if order.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, config implies {}",
            manifest.tensors.len(),
            order.len()
        )));
    }

    let mut params = ModelParams::init(&cfg, 0)?;
    for (id, entry) in order.iter().zip(manifest.tensors.iter()) {
        if id.to_string() != entry.name {
            return Err(Error::Checkpoint(format!(
                "tensor order mismatch: expected {id}, manifest has {}",
                entry.name
            )));
        }
        let start = entry.offset as usize;
        let nbytes = entry.len as usize * 8;
        let end = start + nbytes;
        if end > blob.len() {
            return Err(Error::Checkpoint(format!("blob truncated at {}", entry.name)));
        }
        let mut data = Vec::with_capacity(entry.len as usize);
        for chunk in blob[start..end].chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        *params.get_mut(*id) = Tensor::from_vec(&entry.shape, data)?;
    }
    params.validate_shapes(&cfg)?;
    Ok((params, cfg))
}
