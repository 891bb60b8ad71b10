pub mod eval;
pub mod gen_data;
pub mod replay;
pub mod sample;
pub mod train;

use std::path::Path;

use anyhow::Context;
use rgs_core::nets::checkpoint::Checkpoint;
use rgs_core::{ConditionalPrior, Dataset, VqVae};

use crate::failure::{Classify, Failure};
use crate::manifest::ManifestBuilder;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const STAGE1_FILE: &str = "stage1.ckpt.json";
pub const STAGE2_FILE: &str = "stage2.ckpt.json";
pub const LABELS_FILE: &str = "code_labels.json";
pub const METRICS_FILE: &str = "metrics.csv";

pub fn read_dataset(path: &Path, m: &mut ManifestBuilder) -> anyhow::Result<Dataset> {
    let ds = Dataset::read(path)
        .with_context(|| format!("loading dataset {}", path.display()))
        .class(Failure::Data)?;
    m.input(path).class(Failure::Data)?;
    Ok(ds)
}

pub fn load_checkpoint(path: &Path, m: &mut ManifestBuilder) -> anyhow::Result<Checkpoint> {
    let ck = Checkpoint::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))
        .class(Failure::Data)?;
    m.input(path).class(Failure::Data)?;
    Ok(ck)
}

pub fn load_vq(path: &Path, m: &mut ManifestBuilder) -> anyhow::Result<(VqVae, Checkpoint)> {
    let ck = load_checkpoint(path, m)?;
    let vq = VqVae::from_checkpoint(&ck)
        .with_context(|| format!("restoring stage-1 model from {}", path.display()))
        .class(Failure::Data)?;
    Ok((vq, ck))
}

/// Stage-1 and stage-2 models of a training run directory; the prior must
/// have been trained against exactly this stage-1 model.
pub fn load_models(run: &Path, m: &mut ManifestBuilder) -> anyhow::Result<(VqVae, ConditionalPrior)> {
    let (vq, _) = load_vq(&run.join(STAGE1_FILE), m)?;
    let path = run.join(STAGE2_FILE);
    let ck = load_checkpoint(&path, m)?;
    let prior = ConditionalPrior::from_checkpoint(&ck, &vq)
        .with_context(|| format!("restoring prior from {}", path.display()))
        .class(Failure::Data)?;
    Ok((vq, prior))
}

pub fn to_json<T: serde::Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}
