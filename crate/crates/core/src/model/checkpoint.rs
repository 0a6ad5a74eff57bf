use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, MttParams};
use crate::error::{Error, Result};
use crate::io::{atomic_write, read_json, write_json};
use crate::train::InitSpec;

pub const CHECKPOINT_FORMAT: &str = "mtt-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// JSON half of a checkpoint; the values sit in `values_file` as
/// little-endian f64 in `params` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: ModelConfig,
    pub init: InitSpec,
    pub params: Vec<ParamEntry>,
    pub values_file: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

fn values_path(manifest_path: &Path, manifest: &CheckpointManifest) -> PathBuf {
    manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.values_file)
}

/// Writes `<path>` (JSON) and a sibling `.bin` with the raw values.
pub fn save_checkpoint(
    params: &MttParams,
    path: &Path,
    metadata: BTreeMap<String, serde_json::Value>,
) -> Result<CheckpointManifest> {
    let bin_name = format!(
        "{}.bin",
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    );
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        config: params.config.clone(),
        init: params.init,
        params: params
            .store
            .names()
            .iter()
            .zip(params.store.tensors())
            .map(|(n, t)| ParamEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        values_file: bin_name,
        metadata,
    };
    let bytes: Vec<u8> = params
        .store
        .flatten()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    atomic_write(&values_path(path, &manifest), &bytes)?;
    write_json(path, &manifest)?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<(MttParams, CheckpointManifest)> {
    let manifest: CheckpointManifest = read_json(path)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint format {:?}", manifest.format),
        ));
    }
    let mut params = MttParams::new(manifest.config.clone(), manifest.init)?;
    let layout: Vec<ParamEntry> = params
        .store
        .names()
        .iter()
        .zip(params.store.tensors())
        .map(|(n, t)| ParamEntry {
            name: n.clone(),
            shape: t.shape().to_vec(),
        })
        .collect();
    if layout != manifest.params {
        return Err(Error::format(
            path,
            "parameter layout does not match the model config",
        ));
    }
    let bin = values_path(path, &manifest);
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() != params.store.numel() * 8 {
        return Err(Error::format(
            &bin,
            format!(
                "expected {} bytes, found {}",
                params.store.numel() * 8,
                bytes.len()
            ),
        ));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    params.store.load_flat(&flat)?;
    Ok((params, manifest))
}
