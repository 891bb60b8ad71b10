use std::path::PathBuf;

use clap::Args;
use rgs_core::trainer::{self, DiversityProbe, DIVERSITY_THRESHOLD};
use rgs_core::Evaluation;
use serde::Serialize;

use super::{load_models, read_dataset, to_json};
use crate::config::RunConfig;
use crate::failure::{train_failure, Failure};
use crate::manifest::ManifestBuilder;
use crate::Common;

pub const EVAL_FILE: &str = "eval.json";

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory written by `train --stage both`.
    #[arg(long)]
    pub run: PathBuf,
    /// Number of validation conditions in the diversity probe.
    #[arg(long, default_value_t = 20)]
    pub probe: usize,
}

#[derive(Debug, Serialize)]
struct Report {
    split: &'static str,
    samples: usize,
    /// Reconstruction with the encoder's own code.
    stage1: Evaluation,
    /// Decoding the prior's most probable code.
    stage2: Evaluation,
    top1_accuracy: f64,
    diversity_threshold: f64,
    diversity: DiversityProbe,
    multimodal_fraction: f64,
}

pub fn run(args: EvalArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let seed = cfg.resolve_seed(args.common.seed);
    let snapshot = serde_json::json!({ "run": args.run, "probe": args.probe });
    let mut m = ManifestBuilder::new("eval", seed, snapshot, &args.common.out);
    let dataset = read_dataset(&args.data, &mut m)?;
    let (vq, prior) = load_models(&args.run, &mut m)?;

    let (split, samples) = match dataset.validation() {
        v if !v.is_empty() => ("validation", v),
        _ => {
            m.note("dataset has no validation split; evaluated on the training split");
            ("train", dataset.train())
        }
    };
    let class = |e: trainer::TrainError| {
        let f = match train_failure(&e) {
            Failure::Training => Failure::Data,
            f => f,
        };
        anyhow::Error::new(e).context(f)
    };
    let report = m.time("evaluate", || -> anyhow::Result<Report> {
        let diversity = trainer::diversity_probe(&prior, &samples, args.probe).map_err(class)?;
        Ok(Report {
            split,
            samples: samples.len(),
            stage1: trainer::evaluate_stage1(&vq, &samples).map_err(class)?,
            stage2: trainer::evaluate_stage2(&vq, &prior, &samples).map_err(class)?,
            top1_accuracy: trainer::top1_accuracy(&vq, &prior, &samples).map_err(class)?,
            diversity_threshold: DIVERSITY_THRESHOLD,
            multimodal_fraction: diversity.fraction(),
            diversity,
        })
    })?;
    m.write(EVAL_FILE, &to_json(&report)?)?;
    m.finish()?;
    println!(
        "{split} ({} samples): stage 1 eye {:.3} / head {:.3} deg, stage 2 eye {:.3} / head {:.3} deg, \
         top-1 {:.3}, {}/{} probe conditions multimodal",
        report.samples,
        report.stage1.eye_mgd,
        report.stage1.head_mgd,
        report.stage2.eye_mgd,
        report.stage2.head_mgd,
        report.top1_accuracy,
        report.diversity.multimodal,
        report.diversity.modes.len()
    );
    Ok(())
}
