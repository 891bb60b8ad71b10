use anyhow::Context;
use clap::Args;
use rgs_core::datagen::DataError;
use rgs_core::Dataset;

use super::DATASET_FILE;
use crate::config::RunConfig;
use crate::failure::{Classify, Failure};
use crate::manifest::ManifestBuilder;
use crate::Common;

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of samples; overrides `[generator].n_samples`.
    #[arg(long)]
    pub n_samples: Option<usize>,
}

pub fn run(args: GenDataArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let seed = cfg.resolve_seed(args.common.seed);
    if let Some(n) = args.n_samples {
        cfg.generator.n_samples = n;
    }
    cfg.generator
        .validate()
        .context("invalid [generator] section")
        .class(Failure::Config)?;

    let snapshot = serde_json::json!({ "generator": cfg.generator });
    let mut m = ManifestBuilder::new("gen-data", seed, snapshot, &args.common.out);
    if let Some(path) = &args.common.config {
        m.input(path).class(Failure::Config)?;
    }
    let dataset = m.time("generate", || Dataset::generate(&cfg.generator, seed)).map_err(|e| {
        let class = match e {
            DataError::Config(_) => Failure::Config,
            _ => Failure::Data,
        };
        anyhow::Error::new(e).context("dataset generation failed").context(class)
    })?;
    m.write(DATASET_FILE, dataset.to_jsonl().as_bytes())?;
    m.finish()?;
    println!(
        "wrote {} samples ({} train / {} validation) to {}",
        dataset.len(),
        dataset.header.n_train,
        dataset.header.n_validation,
        args.common.out.join(DATASET_FILE).display()
    );
    Ok(())
}
