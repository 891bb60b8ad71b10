use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, ValueEnum};
use rgs_core::trainer::{self, record_codes, CodeLabels, TrainError};
use rgs_core::EpochMetrics;

use super::{load_vq, read_dataset, to_json, LABELS_FILE, METRICS_FILE, STAGE1_FILE, STAGE2_FILE};
use crate::config::RunConfig;
use crate::failure::{train_failure, Classify, Failure};
use crate::manifest::ManifestBuilder;
use crate::Common;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub stage: Stage,
    /// Run directory holding the stage-1 checkpoint when training stage 2
    /// alone; defaults to `--out`.
    #[arg(long)]
    pub stage1_run: Option<PathBuf>,
    #[arg(long)]
    pub stage1_epochs: Option<usize>,
    #[arg(long)]
    pub stage2_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

fn classify(e: TrainError) -> anyhow::Error {
    let class = train_failure(&e);
    anyhow::Error::new(e).context(class)
}

pub fn run(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let seed = cfg.resolve_seed(args.common.seed);
    let t = &mut cfg.train;
    if let Some(n) = args.stage1_epochs {
        t.stage1_epochs = n;
    }
    if let Some(n) = args.stage2_epochs {
        t.stage2_epochs = n;
    }
    if let Some(n) = args.batch_size {
        t.batch_size = n;
    }
    cfg.train.validate().context("invalid [train] section").class(Failure::Config)?;

    let stage = format!("{:?}", args.stage).to_lowercase();
    let snapshot = serde_json::json!({ "stage": stage, "train": cfg.train });
    let out = &args.common.out;
    let mut m = ManifestBuilder::new("train", seed, snapshot, out);
    if let Some(path) = &args.common.config {
        m.input(path).class(Failure::Config)?;
    }
    let dataset = read_dataset(&args.data, &mut m)?;
    let mut stages: Vec<(&str, Vec<EpochMetrics>)> = Vec::new();

    let (vq, labels) = if args.stage == Stage::Two {
        let run = args.stage1_run.as_ref().unwrap_or(out);
        let (vq, ck) = load_vq(&run.join(STAGE1_FILE), &mut m)?;
        let trained_on = ck.metadata.get("dataset_header_hash").and_then(|v| v.as_str());
        if trained_on != Some(dataset.header_hash().as_str()) {
            return Err(anyhow::anyhow!(
                "stage-1 checkpoint in {} was trained on a different dataset than {}",
                run.display(),
                args.data.display()
            )
            .context(Failure::Data));
        }
        let labels_path = run.join(LABELS_FILE);
        let labels = if labels_path.is_file() {
            let text = std::fs::read_to_string(&labels_path)
                .with_context(|| format!("reading {}", labels_path.display()))
                .class(Failure::Data)?;
            let labels: CodeLabels = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", labels_path.display()))
                .class(Failure::Data)?;
            labels.check(&vq).map_err(|e| anyhow::Error::new(e).context(Failure::Data))?;
            m.input(&labels_path).class(Failure::Data)?;
            labels
        } else {
            m.note(format!("{LABELS_FILE} not found next to the stage-1 checkpoint; codes re-recorded"));
            record_codes(&vq, &dataset.train()).map_err(classify)?
        };
        (vq, labels)
    } else {
        let result = m.time("stage1", || trainer::train_stage1(&dataset, &cfg.train)).map_err(classify)?;
        let best = result.best();
        println!(
            "stage 1: best epoch {} of {}, validation MGD eye {:.3} deg, head {:.3} deg",
            result.best_epoch,
            result.metrics.len(),
            best.val_eye_mgd,
            best.val_head_mgd
        );
        m.write(STAGE1_FILE, result.checkpoint.to_json()?.as_bytes())?;
        let labels = record_codes(&result.model, &dataset.train()).map_err(classify)?;
        m.write(LABELS_FILE, &to_json(&labels)?)?;
        stages.push(("1", result.metrics));
        (result.model, labels)
    };

    if args.stage != Stage::One {
        let result = m
            .time("stage2", || trainer::train_stage2(&vq, &labels, &dataset, &cfg.train))
            .map_err(classify)?;
        let best = result.best();
        println!(
            "stage 2: best epoch {} of {}, validation MGD eye {:.3} deg, head {:.3} deg, top-1 {:.3}",
            result.best_epoch,
            result.metrics.len(),
            best.val_eye_mgd,
            best.val_head_mgd,
            best.top1_accuracy.unwrap_or_default()
        );
        m.write(STAGE2_FILE, result.checkpoint.to_json()?.as_bytes())?;
        stages.push(("2", result.metrics));
    }

    let borrowed: Vec<(&str, &[EpochMetrics])> = stages.iter().map(|(s, v)| (*s, v.as_slice())).collect();
    m.write(METRICS_FILE, trainer::metrics_csv(&borrowed).as_bytes())?;
    m.finish()?;
    Ok(())
}
