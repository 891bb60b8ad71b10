//! Versioned JSON checkpoint container.
//!
//! ```json
//! {
//!   "format": "rgs-checkpoint", "version": 1, "kind": "vqvae",
//!   "architecture": { "decoder": [{"inputs": 32, "outputs": 64, "activation": "relu"}, ...] },
//!   "tensors": { "decoder.0.weight": {"shape": [64, 32], "data": [...]}, ... },
//!   "optimizer": { ... },
//!   "metadata": { ... }
//! }
//! ```
//!
//! Numbers are written in shortest round-trip form and parsed with correct
//! rounding, so every `f64` survives a save/load cycle bit for bit.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{AdamSnapshot, DenseNetwork, LayerShape, NetError};

pub const CHECKPOINT_FORMAT: &str = "rgs-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o")]
    Io(#[from] std::io::Error),
    #[error("checkpoint json")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint: {0}")]
    Format(String),
    #[error("checkpoint has no tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub architecture: BTreeMap<String, Vec<LayerShape>>,
    pub tensors: BTreeMap<String, Tensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamSnapshot>,
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            architecture: BTreeMap::new(),
            tensors: BTreeMap::new(),
            optimizer: None,
            metadata: serde_json::Map::new(),
        }
    }

    pub fn add_network(&mut self, section: &str, net: &DenseNetwork) {
        self.architecture.insert(section.into(), net.layers().to_vec());
        for (name, shape, data) in net.tensors() {
            self.tensors.insert(
                format!("{section}.{name}"),
                Tensor {
                    shape,
                    data: data.to_vec(),
                },
            );
        }
    }

    pub fn network(&self, section: &str) -> Result<DenseNetwork, CheckpointError> {
        let layers = self
            .architecture
            .get(section)
            .ok_or_else(|| CheckpointError::Format(format!("no architecture for `{section}`")))?
            .clone();
        let mut params = Vec::new();
        for (i, l) in layers.iter().enumerate() {
            let w = self.tensor_with_shape(&format!("{section}.{i}.weight"), &[l.outputs, l.inputs])?;
            let b = self.tensor_with_shape(&format!("{section}.{i}.bias"), &[l.outputs])?;
            params.extend_from_slice(&w.data);
            params.extend_from_slice(&b.data);
        }
        Ok(DenseNetwork::from_parts(layers, params)?)
    }

    pub fn add_tensor(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        self.tensors.insert(name.into(), Tensor { shape, data });
    }

    pub fn tensor_with_shape(&self, name: &str, shape: &[usize]) -> Result<&Tensor, CheckpointError> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.into()))?;
        let len: usize = t.shape.iter().product();
        if t.shape != shape || t.data.len() != len {
            return Err(CheckpointError::Shape {
                name: name.into(),
                expected: shape.to_vec(),
                found: t.shape.clone(),
            });
        }
        Ok(t)
    }

    /// SHA-256 over tensor names, shapes and little-endian values, in name order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            h.update([0u8]);
            for d in &t.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Format(format!("format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Format(format!("version {}", ck.version)));
        }
        Ok(ck)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.kind != kind {
            return Err(CheckpointError::Format(format!(
                "expected a `{kind}` checkpoint, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        write_atomic(path, self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Writes `bytes` to a sibling `.tmp` file, syncs it, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
