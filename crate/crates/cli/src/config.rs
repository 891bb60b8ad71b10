//! Run configuration file (TOML). Every section is optional; command-line
//! flags override whatever the file sets.
//!
//! ```toml
//! seed = 7
//!
//! [generator]              # dataset generator, see `GeneratorConfig`
//! n_samples = 805
//! coupling = { kind = "range", rank_noise = 0.02 }
//!
//! [train]                  # see `TrainConfig`
//! stage1_epochs = 200
//! stage2_epochs = 100
//!
//! [sample]
//! n = 10
//! mode = "sample"          # or "argmax"
//! floor = 0.0
//!
//! [replay]
//! backend = "scripted"     # or "remote"
//! script = "oracle"
//! endpoint = "http://localhost:8000/v1/chat/completions"
//! model = "my-vlm"
//! timeout_ms = 1400
//! max_tokens = 16
//! token_env = "RGS_VLM_TOKEN"
//! image_root = "frames"
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::ValueEnum;
use rgs_core::{GeneratorConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::failure::{Classify, Failure};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub sample: SampleSection,
    pub replay: ReplaySection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Sample,
    Argmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub n: usize,
    pub mode: SampleMode,
    /// Codes with prior probability at or below this are never drawn.
    pub floor: f64,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            n: 10,
            mode: SampleMode::Sample,
            floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySection {
    pub backend: BackendKind,
    /// Name of the scripted response set inside each scenario.
    pub script: String,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout_ms: u64,
    pub max_tokens: u32,
    /// Environment variable holding the bearer token; the token itself is
    /// never stored in a config file or manifest.
    pub token_env: String,
    /// Defaults to the scenario directory.
    pub image_root: Option<PathBuf>,
}

impl Default for ReplaySection {
    fn default() -> Self {
        Self {
            backend: BackendKind::Scripted,
            script: "oracle".into(),
            endpoint: None,
            model: None,
            timeout_ms: 1400,
            max_tokens: 16,
            token_env: "RGS_VLM_TOKEN".into(),
            image_root: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Reads `path`, or returns the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .class(Failure::Config)?;
        Self::from_toml(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .class(Failure::Config)
    }

    /// Seed precedence: flag, then the top-level `seed`, then `[train].seed`.
    /// The resolved seed is written back into the training section.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> u64 {
        let seed = flag.or(self.seed).unwrap_or(self.train.seed);
        self.seed = Some(seed);
        self.train.seed = seed;
        seed
    }
}
