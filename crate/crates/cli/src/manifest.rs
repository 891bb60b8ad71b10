use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one invocation: enough to rerun it and to check its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: u64,
    /// Fully resolved configuration, including flag overrides.
    pub config: serde_json::Value,
    /// Input path → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
    pub timings_ms: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Collects manifest fields while a subcommand runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
    out_dir: PathBuf,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, seed: u64, config: serde_json::Value, out_dir: &Path) -> Self {
        Self {
            manifest: RunManifest {
                subcommand: subcommand.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                seed,
                config,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                timings_ms: BTreeMap::new(),
                notes: Vec::new(),
            },
            out_dir: out_dir.to_path_buf(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let hash = sha256_file(path)?;
        self.manifest.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    /// Writes `bytes` atomically under the output directory and records it.
    pub fn write(&mut self, relative: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.out_dir.join(relative);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        rgs_core::write_atomic(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.output(relative);
        Ok(path)
    }

    /// Records a file that something else wrote under the output directory.
    pub fn output(&mut self, relative: &str) {
        if !self.manifest.outputs.iter().any(|o| o == relative) {
            self.manifest.outputs.push(relative.into());
        }
    }

    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings_ms.insert(phase.into(), t.elapsed().as_secs_f64() * 1e3);
        out
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.manifest.notes.push(note.into());
    }

    /// Checks that every named output exists, then writes the manifest last.
    pub fn finish(mut self) -> anyhow::Result<RunManifest> {
        for o in &self.manifest.outputs {
            ensure!(self.out_dir.join(o).is_file(), "declared output {o} was not written");
        }
        self.manifest
            .timings_ms
            .insert("total".into(), self.started.elapsed().as_secs_f64() * 1e3);
        let json = serde_json::to_string_pretty(&self.manifest)?;
        let path = self.out_dir.join(MANIFEST_FILE);
        rgs_core::write_atomic(&path, json.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
        Ok(self.manifest)
    }
}

impl std::ops::Deref for ManifestBuilder {
    type Target = RunManifest;
    fn deref(&self) -> &RunManifest {
        &self.manifest
    }
}

impl std::ops::DerefMut for ManifestBuilder {
    fn deref_mut(&mut self) -> &mut RunManifest {
        &mut self.manifest
    }
}
