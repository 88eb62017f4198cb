//! On-disk checkpoint directory.
//!
//! ```text
//! <dir>/meta.json      network config, cutoff, training settings, format version
//! <dir>/params.bin     little-endian f32 tensors, concatenated in block order
//! <dir>/manifest.json  [{name, shape, offset}] with byte offsets into params.bin
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingNetwork, NetworkConfig, Param};
use crate::error::{DiuError, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub network: NetworkConfig,
    /// `None` for a teacher, `Some(k)` for a student adapted at blocks `1..=k`.
    pub diu_cutoff: Option<usize>,
    /// Free-form training hyperparameters recorded for provenance.
    pub training: serde_json::Value,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub network: EmbeddingNetwork,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| DiuError::io(path, e))
}

pub fn save_checkpoint(
    dir: &Path,
    network: &EmbeddingNetwork,
    diu_cutoff: Option<usize>,
    training: serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DiuError::io(dir, e))?;
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_FORMAT_VERSION,
        network: network.config().clone(),
        diu_cutoff,
        training,
        seed: network.config().seed,
    };
    let mut blob = Vec::with_capacity(network.parameter_count() * 4);
    let mut manifest = Vec::with_capacity(network.params().len());
    for p in network.params() {
        manifest.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            offset: blob.len() as u64,
        });
        for v in &p.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_file(&dir.join("meta.json"), &serde_json::to_vec_pretty(&meta)?)?;
    write_file(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    write_file(&dir.join("params.bin"), &blob)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let fail = |message: String| DiuError::Checkpoint {
        path: dir.to_path_buf(),
        message,
    };
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(|e| DiuError::io(path, e))
    };

    let meta: CheckpointMeta = serde_json::from_slice(&read("meta.json")?)?;
    if meta.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(fail(format!(
            "format version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
            meta.format_version
        )));
    }
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(&read("manifest.json")?)?;
    let blob = read("params.bin")?;

    // The config decides the expected layout; the manifest must agree with it exactly.
    let template = EmbeddingNetwork::new(meta.network.clone())?;
    if manifest.len() != template.params().len() {
        return Err(fail(format!(
            "manifest lists {} tensors, config implies {}",
            manifest.len(),
            template.params().len()
        )));
    }
    let mut params = Vec::with_capacity(manifest.len());
    let mut expected_offset = 0u64;
    for (entry, proto) in manifest.iter().zip(template.params()) {
        if entry.name != proto.name || entry.shape != proto.shape {
            return Err(fail(format!(
                "tensor `{}` {:?} does not match expected `{}` {:?}",
                entry.name, entry.shape, proto.name, proto.shape
            )));
        }
        if entry.offset != expected_offset {
            return Err(fail(format!("tensor `{}` has offset {} (expected {expected_offset})", entry.name, entry.offset)));
        }
        let start = entry.offset as usize;
        let end = start + proto.len() * 4;
        let bytes = blob
            .get(start..end)
            .ok_or_else(|| fail(format!("params.bin is truncated at tensor `{}`", entry.name)))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        params.push(Param {
            name: proto.name.clone(),
            shape: proto.shape.clone(),
            group: proto.group,
            data,
        });
        expected_offset = end as u64;
    }
    if blob.len() as u64 != expected_offset {
        return Err(fail(format!(
            "params.bin has {} bytes, manifest accounts for {expected_offset}",
            blob.len()
        )));
    }
    Ok(Checkpoint {
        network: EmbeddingNetwork::from_parts(meta.network.clone(), params),
        meta,
    })
}
