use std::path::PathBuf;

use anyhow::{ensure, Context};
use clap::Args;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rgs_core::trainer::{infer, InferenceMode, DIVERSITY_THRESHOLD};
use rgs_core::{ConditionVector, EyePose, HeadPose, MotionAllocation};
use serde::Serialize;

use super::{load_models, to_json};
use crate::config::{RunConfig, SampleMode};
use crate::failure::{Classify, Failure};
use crate::manifest::ManifestBuilder;
use crate::Common;

pub const SAMPLES_FILE: &str = "samples.json";

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory holding both checkpoints.
    #[arg(long)]
    pub run: PathBuf,
    /// `eye_yaw,eye_pitch,head_yaw,head_pitch,head_roll,x,y,z`: current
    /// poses in degrees and the target in meters (base frame).
    #[arg(long, allow_hyphen_values = true)]
    pub condition: String,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<SampleMode>,
    /// Never draw codes whose probability is at or below this value.
    #[arg(long)]
    pub floor: Option<f64>,
}

/// Parses the `--condition` value.
pub fn parse_condition(text: &str) -> anyhow::Result<ConditionVector> {
    let v = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("`{s}` is not a number")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    ensure!(v.len() == 8, "expected 8 comma-separated values, found {}", v.len());
    let r = |d: f64| d.to_radians();
    Ok(ConditionVector::new(
        EyePose::new(r(v[0]), r(v[1])),
        HeadPose::new(r(v[2]), r(v[3]), r(v[4])),
        [v[5], v[6], v[7]],
    )?)
}

#[derive(Debug, Serialize)]
struct Degrees {
    eye: [f64; 2],
    head: [f64; 3],
}

impl Degrees {
    fn new(eye: EyePose, head: HeadPose) -> Self {
        Self {
            eye: eye.to_array().map(f64::to_degrees),
            head: head.to_array().map(f64::to_degrees),
        }
    }
}

#[derive(Debug, Serialize)]
struct Mode {
    code: usize,
    probability: f64,
}

#[derive(Debug, Serialize)]
struct Draw {
    code: usize,
    delta_deg: Degrees,
    target_deg: Degrees,
}

#[derive(Debug, Serialize)]
struct Output {
    pose_deg: Degrees,
    target_m: [f64; 3],
    mode: SampleMode,
    floor: f64,
    pi: Vec<f64>,
    diversity_threshold: f64,
    /// Codes with `π > diversity_threshold`, most probable first.
    modes: Vec<Mode>,
    samples: Vec<Draw>,
}

fn draw(code: usize, y: &MotionAllocation, c: &ConditionVector) -> anyhow::Result<Draw> {
    let (eye, head) = y.target_poses(c)?;
    Ok(Draw {
        code,
        delta_deg: Degrees::new(y.delta_eye, y.delta_head),
        target_deg: Degrees::new(eye, head),
    })
}

pub fn run(args: SampleArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let seed = cfg.resolve_seed(args.common.seed);
    let s = &mut cfg.sample;
    if let Some(n) = args.n {
        s.n = n;
    }
    if let Some(mode) = args.mode {
        s.mode = mode;
    }
    if let Some(floor) = args.floor {
        s.floor = floor;
    }
    if !(0.0..1.0).contains(&s.floor) {
        return Err(anyhow::anyhow!("floor must lie in [0, 1), got {}", s.floor).context(Failure::Config));
    }
    let condition = parse_condition(&args.condition)
        .context("invalid --condition")
        .class(Failure::Config)?;
    let mode = match s.mode {
        SampleMode::Sample => InferenceMode::Sample { floor: s.floor },
        SampleMode::Argmax => InferenceMode::Argmax,
    };

    let snapshot = serde_json::json!({ "run": args.run, "condition": args.condition, "sample": cfg.sample });
    let mut m = ManifestBuilder::new("sample", seed, snapshot, &args.common.out);
    let (vq, prior) = load_models(&args.run, &mut m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = prior.forward(&condition).class(Failure::Data)?;
    let samples = m.time("sample", || {
        (0..cfg.sample.n)
            .map(|_| {
                let inf = infer(&vq, &prior, &condition, mode, &mut rng)?;
                draw(inf.code, &inf.allocation, &condition)
            })
            .collect::<anyhow::Result<Vec<_>>>()
    })
    .class(Failure::Data)?;
    let output = Output {
        pose_deg: Degrees::new(condition.eye, condition.head),
        target_m: condition.target,
        mode: cfg.sample.mode,
        floor: cfg.sample.floor,
        modes: pi
            .codes_above(DIVERSITY_THRESHOLD)
            .into_iter()
            .map(|(code, probability)| Mode { code, probability })
            .collect(),
        pi: pi.probs().to_vec(),
        diversity_threshold: DIVERSITY_THRESHOLD,
        samples,
    };
    m.write(SAMPLES_FILE, &to_json(&output)?)?;
    m.finish()?;
    let listed: Vec<String> = output.modes.iter().map(|d| format!("{} ({:.3})", d.code, d.probability)).collect();
    println!(
        "{} samples written; codes above {DIVERSITY_THRESHOLD}: {}",
        output.samples.len(),
        listed.join(", ")
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_parsing() {
        let c = parse_condition("10, -5, 20, 0, 1, 1.5, 0.2, -0.1").unwrap();
        assert!((c.eye.yaw - 10f64.to_radians()).abs() < 1e-15);
        assert!((c.head.roll - 1f64.to_radians()).abs() < 1e-15);
        assert_eq!(c.target, [1.5, 0.2, -0.1]);
        assert!(parse_condition("1,2,3").is_err());
        assert!(parse_condition("a,0,0,0,0,1,0,0").is_err());
        assert!(parse_condition("0,0,0,0,0,0,0,0").is_err(), "target at the origin");
    }
}
