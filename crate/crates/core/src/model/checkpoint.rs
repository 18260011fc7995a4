//! Checkpoints: a JSON manifest beside a raw little-endian f32 payload.
//!
//! The manifest lists every tensor with its shape and byte offset. Model
//! parameters come first, in parameter-set order, followed by optional
//! auxiliary tensors (optimiser moments when saved by the trainer).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dims, Model, Network, Param, ParamSet, Variant};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_FORMAT: &str = "dynfire-checkpoint-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// Owning network for model parameters; absent for auxiliary tensors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<Network>,
    pub shape: Vec<usize>,
    /// Byte offset into the payload file.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub variant: Variant,
    pub dims: Dims,
    pub seed: u64,
    pub created_by: String,
    /// Training iterations completed when the checkpoint was written.
    pub iteration: u64,
    pub payload: String,
    pub payload_bytes: u64,
    pub tensors: Vec<TensorEntry>,
    /// Free-form trainer state (schedule, counters, loss history).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub iteration: u64,
    pub aux: Vec<(String, Tensor<f32>)>,
    pub state: Option<serde_json::Value>,
}

/// Manifest path for a user-supplied checkpoint path (`x`, `x.json` or
/// `x.bin`); a training output directory stands for its `final.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        return path.join("final.json");
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => path.to_path_buf(),
        Some("bin") => path.with_extension("json"),
        _ => {
            let mut s = path.as_os_str().to_owned();
            s.push(".json");
            PathBuf::from(s)
        }
    }
}

impl Checkpoint {
    pub fn from_model(model: Model<f32>) -> Self {
        Self {
            model,
            iteration: 0,
            aux: Vec::new(),
            state: None,
        }
    }

    pub fn manifest(&self, payload_name: &str) -> CheckpointManifest {
        let mut offset = 0u64;
        let mut tensors = Vec::new();
        let mut add = |name: &str, network: Option<Network>, t: &Tensor<f32>| {
            tensors.push(TensorEntry {
                name: name.to_string(),
                network,
                shape: t.shape().to_vec(),
                offset,
            });
            offset += 4 * t.len() as u64;
        };
        for p in self.model.params.iter() {
            add(&p.name, Some(p.network), &p.tensor);
        }
        for (name, t) in &self.aux {
            add(name, None, t);
        }
        CheckpointManifest {
            format: CHECKPOINT_FORMAT.to_string(),
            variant: self.model.variant,
            dims: self.model.dims,
            seed: self.model.seed,
            created_by: format!("dynfire {}", env!("CARGO_PKG_VERSION")),
            iteration: self.iteration,
            payload: payload_name.to_string(),
            payload_bytes: offset,
            tensors,
            state: self.state.clone(),
        }
    }

    fn payload(&self) -> Vec<u8> {
        let tensors = self.model.params.iter().map(|p| &p.tensor).chain(self.aux.iter().map(|(_, t)| t));
        tensors
            .flat_map(|t| t.data().iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }

    /// Writes `<stem>.json` and `<stem>.bin`; returns the manifest path.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        let manifest_path = manifest_path(path);
        let payload_path = manifest_path.with_extension("bin");
        if let Some(dir) = manifest_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let payload_name = payload_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let manifest = self.manifest(&payload_name);
        fs::write(&payload_path, self.payload())?;
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&manifest_path, text)?;
        Ok(manifest_path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let manifest_path = manifest_path(path);
        let text = fs::read_to_string(&manifest_path)?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "unsupported checkpoint format `{}` (expected `{CHECKPOINT_FORMAT}`)",
                manifest.format
            )));
        }
        let payload_path = manifest_path.with_file_name(&manifest.payload);
        let bytes = fs::read(&payload_path)?;
        Self::from_parts(manifest, &bytes)
    }

    pub fn from_parts(manifest: CheckpointManifest, bytes: &[u8]) -> Result<Self> {
        if bytes.len() as u64 != manifest.payload_bytes {
            return Err(Error::format(
                bytes.len().min(manifest.payload_bytes as usize) as u64,
                format!(
                    "checkpoint payload has {} bytes, manifest declares {}",
                    bytes.len(),
                    manifest.payload_bytes
                ),
            ));
        }
        let mut expected = 0u64;
        let mut params = Vec::new();
        let mut aux = Vec::new();
        for entry in &manifest.tensors {
            if entry.offset != expected {
                return Err(Error::format(
                    entry.offset,
                    format!("tensor `{}` starts at byte {}, expected {expected}", entry.name, entry.offset),
                ));
            }
            let n: usize = entry.shape.iter().product();
            let end = entry.offset + 4 * n as u64;
            if end > bytes.len() as u64 {
                return Err(Error::format(
                    bytes.len() as u64,
                    format!("tensor `{}` runs past the end of the payload", entry.name),
                ));
            }
            let data = bytes[entry.offset as usize..end as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let tensor = Tensor::new(entry.shape.clone(), data)?;
            match entry.network {
                Some(network) => params.push(Param {
                    name: entry.name.clone(),
                    network,
                    tensor,
                }),
                None => aux.push((entry.name.clone(), tensor)),
            }
            expected = end;
        }
        if expected != manifest.payload_bytes {
            return Err(Error::format(expected, "trailing bytes after the last tensor"));
        }
        let model = Model::from_params(manifest.variant, manifest.dims, manifest.seed, ParamSet::new(params))?;
        Ok(Self {
            model,
            iteration: manifest.iteration,
            aux,
            state: manifest.state,
        })
    }

    pub fn aux(&self, name: &str) -> Option<&Tensor<f32>> {
        self.aux.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}
