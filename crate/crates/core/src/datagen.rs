//! Synthetic gaze-shift dataset: geometrically consistent `(c, y)` pairs with
//! eye-dominant and head-dominant allocation strategies, plus JSON-lines I/O.
//!
//! Kinematics: eyes and head share one rotation center at the base origin.
//! The gaze ray is `R_head · R_eye · x̂`.
//!
//! Strategy model: the head-contribution ratio `α` comes from a two-component
//! Gaussian mixture. Under [`StrategyCoupling::Range`] the uniform rank of the
//! `α` draw (plus a little folded noise) also sets the target distance, so the
//! range marginal stays uniform while the strategy becomes inferable from the
//! condition. [`StrategyCoupling::Independent`] draws the two separately.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::so3::{self, direction_angles, wrap_angle, EulerPose, EyePose, HeadPose};
use crate::vqvae::{ConditionVector, MotionAllocation, MIN_TARGET_NORM};

pub const DATASET_SCHEMA: &str = "rgs-gaze-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset i/o")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: field `{field}`: {message}")]
    Field {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("sample {index} (line {line}): {message}")]
    Invariant {
        index: usize,
        line: usize,
        message: String,
    },
    #[error("dataset header: {0}")]
    Header(String),
    #[error("generator configuration: {0}")]
    Config(String),
    #[error("generation failed after {attempts} consecutive rejections (last: {last})")]
    Rejected { attempts: usize, last: String },
    #[error("degenerate target {0:?}: too close to the rotation center")]
    DegenerateTarget([f64; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    EyeDominant,
    HeadDominant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    pub condition: ConditionVector,
    pub allocation: MotionAllocation,
    pub strategy: Strategy,
}

/// Mechanical limits, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub eye_yaw: f64,
    pub eye_pitch: f64,
    pub head_yaw: f64,
    pub head_pitch: f64,
    pub head_roll: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            eye_yaw: 35.0,
            eye_pitch: 25.0,
            head_yaw: 80.0,
            head_pitch: 40.0,
            head_roll: 10.0,
        }
    }
}

impl Limits {
    /// First violated limit, if any.
    pub fn violation(&self, eye: &EyePose, head: &HeadPose) -> Option<String> {
        let checks = [
            ("eye yaw", eye.yaw, self.eye_yaw),
            ("eye pitch", eye.pitch, self.eye_pitch),
            ("head yaw", head.yaw, self.head_yaw),
            ("head pitch", head.pitch, self.head_pitch),
            ("head roll", head.roll, self.head_roll),
        ];
        checks.iter().find_map(|&(name, v, lim)| {
            (v.abs() > lim.to_radians() + 1e-12)
                .then(|| format!("{name} {:.3} deg exceeds {lim} deg", v.to_degrees()))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StrategyCoupling {
    Independent,
    /// Target range follows the rank of the strategy draw, with Gaussian rank
    /// noise of this standard deviation.
    Range { rank_noise: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_samples: usize,
    pub train_fraction: f64,
    pub limits: Limits,
    /// Initial poses are drawn within this fraction of the limits.
    pub initial_fraction: f64,
    pub range_m: [f64; 2],
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    /// Probability of the head-dominant component.
    pub strategy_mix: f64,
    pub eye_dominant: MixtureComponent,
    pub head_dominant: MixtureComponent,
    pub coupling: StrategyCoupling,
    pub roll_sd_deg: f64,
    pub fixation_noise_deg: f64,
    pub consistency_tolerance_deg: f64,
    pub max_rejections: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_samples: 805,
            train_fraction: 0.8,
            limits: Limits::default(),
            initial_fraction: 0.5,
            range_m: [0.5, 3.0],
            azimuth_deg: 70.0,
            elevation_deg: 35.0,
            strategy_mix: 0.5,
            eye_dominant: MixtureComponent { mean: 0.35, sd: 0.08 },
            head_dominant: MixtureComponent { mean: 0.75, sd: 0.08 },
            coupling: StrategyCoupling::Range { rank_noise: 0.02 },
            roll_sd_deg: 1.5,
            fixation_noise_deg: 0.3,
            consistency_tolerance_deg: 2.0,
            max_rejections: 100,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let l = &self.limits;
        let bad = |m: &str| Err(DataError::Config(m.to_string()));
        if [l.eye_yaw, l.eye_pitch, l.head_yaw, l.head_pitch, l.head_roll]
            .iter()
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return bad("every mechanical limit must be a positive number of degrees");
        }
        if !(0.0..=1.0).contains(&self.initial_fraction) {
            return bad("initial_fraction must lie in [0, 1]");
        }
        if !(self.range_m[0] > MIN_TARGET_NORM && self.range_m[1] > self.range_m[0]) {
            return bad("range_m must be increasing and above the minimum target norm");
        }
        if !(0.0..=1.0).contains(&self.strategy_mix) {
            return bad("strategy_mix must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.train_fraction) || self.train_fraction == 0.0 {
            return bad("train_fraction must lie in (0, 1)");
        }
        for c in [self.eye_dominant, self.head_dominant] {
            if !(c.sd >= 0.0 && c.mean.is_finite()) {
                return bad("mixture components need a finite mean and sd >= 0");
            }
        }
        if let StrategyCoupling::Range { rank_noise } = self.coupling {
            if rank_noise.is_nan() || rank_noise < 0.0 {
                return bad("rank_noise must be >= 0");
            }
        }
        if !(self.roll_sd_deg >= 0.0 && self.fixation_noise_deg >= 0.0 && self.consistency_tolerance_deg > 0.0) {
            return bad("noise levels must be >= 0 and the tolerance positive");
        }
        if self.max_rejections == 0 {
            return bad("max_rejections must be positive");
        }
        Ok(())
    }

    pub fn n_train(&self) -> usize {
        (self.n_samples as f64 * self.train_fraction).round() as usize
    }
}

/// `R_head · R_eye · x̂`: the base-frame gaze direction.
pub fn gaze_ray(eye: &EyePose, head: &HeadPose) -> Vector3<f64> {
    let r = so3::matrix_from_angles(head.to_array()) * so3::matrix_from_angles([eye.yaw, eye.pitch, 0.0]);
    (r * Vector3::x()).normalize()
}

/// Absolute gaze angles the combined eye+head must realize to look at
/// `target`: yaw = atan2(y, x), pitch = atan2(z, sqrt(x² + y²)) (up positive).
pub fn required_shift(target: &[f64; 3]) -> Result<(f64, f64), DataError> {
    let v = Vector3::from(*target);
    let norm = v.norm();
    if norm.is_nan() || norm <= MIN_TARGET_NORM {
        return Err(DataError::DegenerateTarget(*target));
    }
    Ok(direction_angles(&v))
}

/// Angle between the gaze ray after applying `y` and the target direction.
pub fn consistency_error(c: &ConditionVector, y: &MotionAllocation) -> f64 {
    let eye = c.eye.add_raw(&y.delta_eye);
    let head = c.head.add_raw(&y.delta_head);
    let ray = gaze_ray(&eye, &head);
    angle_between(&ray, &Vector3::from(c.target))
}

/// Checks finiteness, limits, and geometric consistency.
pub fn check_sample(sample: &GazeSample, config: &GeneratorConfig) -> Result<(), String> {
    sample.condition.validate().map_err(|e| e.to_string())?;
    sample.allocation.validate().map_err(|e| e.to_string())?;
    let eye = sample.condition.eye.add_raw(&sample.allocation.delta_eye);
    let head = sample.condition.head.add_raw(&sample.allocation.delta_head);
    if let Some(v) = config.limits.violation(&eye, &head) {
        return Err(format!("post-shift {v}"));
    }
    let err = consistency_error(&sample.condition, &sample.allocation);
    if err > config.consistency_tolerance_deg.to_radians() {
        return Err(format!(
            "gaze misses the target by {:.3} deg",
            err.to_degrees()
        ));
    }
    Ok(())
}

/// Head share of the yaw/pitch rotation in an allocation.
pub fn head_contribution(y: &MotionAllocation) -> f64 {
    let head = y.delta_head.yaw.hypot(y.delta_head.pitch);
    let eye = y.delta_eye.yaw.hypot(y.delta_eye.pitch);
    if head + eye == 0.0 {
        0.0
    } else {
        head / (head + eye)
    }
}

/// Splits the remaining gaze shift: the head takes `alpha` of the yaw and
/// pitch change, the eyes take whatever re-centres the gaze on the target.
///
/// `eye_noise` (radians) perturbs the final eye yaw/pitch.
pub fn allocate(
    eye: EyePose,
    head: HeadPose,
    target: &[f64; 3],
    alpha: f64,
    roll_increment: f64,
    eye_noise: [f64; 2],
) -> Result<MotionAllocation, DataError> {
    let (req_yaw, req_pitch) = required_shift(target)?;
    let (cur_yaw, cur_pitch) = direction_angles(&gaze_ray(&eye, &head));
    let d_yaw = wrap_angle(req_yaw - cur_yaw);
    let d_pitch_up = req_pitch - cur_pitch;
    // rotation pitch is positive downward
    let delta_head = HeadPose::new(alpha * d_yaw, -alpha * d_pitch_up, roll_increment);
    let head_after = head.add_raw(&delta_head);
    let r_head = so3::matrix_from_angles(head_after.to_array());
    let local = r_head.transpose() * Vector3::from(*target).normalize();
    let eye_yaw = local.y.atan2(local.x) + eye_noise[0];
    let eye_pitch = (-local.z).atan2(local.x.hypot(local.y)) + eye_noise[1];
    let delta_eye = EyePose::new(wrap_angle(eye_yaw - eye.yaw), wrap_angle(eye_pitch - eye.pitch));
    Ok(MotionAllocation {
        delta_eye,
        delta_head,
    })
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(z / std::f64::consts::SQRT_2))
}

/// Reflects a value into [0, 1].
fn fold_unit(v: f64) -> f64 {
    let w = v.rem_euclid(2.0);
    if w > 1.0 {
        2.0 - w
    } else {
        w
    }
}

/// One accepted draw with its latent strategy variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub sample: GazeSample,
    /// Head-contribution ratio used for the allocation, after clamping.
    pub alpha: f64,
}

pub fn generate_sample<R: Rng + ?Sized>(rng: &mut R, config: &GeneratorConfig) -> Result<Draw, DataError> {
    config.validate()?;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let lim = &config.limits;
    let f = config.initial_fraction;
    let sym = |rng: &mut R, half_deg: f64| -> f64 {
        let b = half_deg.to_radians();
        if b == 0.0 {
            0.0
        } else {
            rng.random_range(-b..=b)
        }
    };
    let mut last = String::new();
    for _ in 0..config.max_rejections {
        // strategy first, so the coupled range can depend on its rank
        let head_dominant = rng.random_bool(config.strategy_mix);
        let z = unit.sample(rng);
        let (component, strategy, lower) = if head_dominant {
            (config.head_dominant, Strategy::HeadDominant, 1.0 - config.strategy_mix)
        } else {
            (config.eye_dominant, Strategy::EyeDominant, 0.0)
        };
        let weight = if head_dominant { config.strategy_mix } else { 1.0 - config.strategy_mix };
        let alpha = (component.mean + component.sd * z).clamp(0.0, 1.0);
        let rank = lower + weight * std_normal_cdf(z);

        let [r_min, r_max] = config.range_m;
        let range = match config.coupling {
            StrategyCoupling::Independent => rng.random_range(r_min..=r_max),
            StrategyCoupling::Range { rank_noise } => {
                let noisy = rank + rank_noise * unit.sample(rng);
                r_min + (r_max - r_min) * fold_unit(noisy)
            }
        };

        let eye = EyePose::new(sym(rng, lim.eye_yaw * f), sym(rng, lim.eye_pitch * f));
        let head = HeadPose::new(
            sym(rng, lim.head_yaw * f),
            sym(rng, lim.head_pitch * f),
            sym(rng, lim.head_roll * f),
        );
        let az = sym(rng, config.azimuth_deg);
        let el = sym(rng, config.elevation_deg);
        let target = [
            range * el.cos() * az.cos(),
            range * el.cos() * az.sin(),
            range * el.sin(),
        ];
        let roll = config.roll_sd_deg.to_radians() * unit.sample(rng);
        let fix = config.fixation_noise_deg.to_radians();
        let noise = [fix * unit.sample(rng), fix * unit.sample(rng)];

        let allocation = allocate(eye, head, &target, alpha, roll, noise)?;
        let sample = GazeSample {
            condition: ConditionVector { eye, head, target },
            allocation,
            strategy,
        };
        match check_sample(&sample, config) {
            Ok(()) => return Ok(Draw { sample, alpha }),
            Err(why) => last = why,
        }
    }
    Err(DataError::Rejected {
        attempts: config.max_rejections,
        last,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema: String,
    pub version: u32,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub n_samples: usize,
    pub n_train: usize,
    pub n_validation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<GazeSample>,
    pub splits: Vec<Split>,
}

impl Dataset {
    /// Generates `config.n_samples` samples and a seeded train/validation split.
    pub fn generate(config: &GeneratorConfig, seed: u64) -> Result<Self, DataError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..config.n_samples)
            .map(|_| generate_sample(&mut rng, config).map(|d| d.sample))
            .collect::<Result<Vec<_>, _>>()?;
        let n_train = config.n_train();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let mut splits = vec![Split::Validation; samples.len()];
        for &i in &order[..n_train] {
            splits[i] = Split::Train;
        }
        Ok(Self {
            header: DatasetHeader {
                schema: DATASET_SCHEMA.into(),
                version: DATASET_VERSION,
                seed,
                generator: config.clone(),
                n_samples: samples.len(),
                n_train,
                n_validation: samples.len() - n_train,
            },
            samples,
            splits,
        })
    }

    /// Builds a dataset from explicit samples (all assigned to `split`).
    pub fn from_samples(samples: Vec<GazeSample>, split: Split, config: GeneratorConfig, seed: u64) -> Self {
        let n = samples.len();
        let n_train = if split == Split::Train { n } else { 0 };
        Self {
            header: DatasetHeader {
                schema: DATASET_SCHEMA.into(),
                version: DATASET_VERSION,
                seed,
                generator: config,
                n_samples: n,
                n_train,
                n_validation: n - n_train,
            },
            splits: vec![split; n],
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, which: Split) -> Vec<&GazeSample> {
        self.samples
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == which)
            .map(|(x, _)| x)
            .collect()
    }

    pub fn train(&self) -> Vec<&GazeSample> {
        self.split(Split::Train)
    }

    pub fn validation(&self) -> Vec<&GazeSample> {
        self.split(Split::Validation)
    }

    fn header_line(&self) -> String {
        serde_json::to_string(&self.header).expect("header serializes")
    }

    /// SHA-256 of the serialized header line (seed + generator config + counts).
    pub fn header_hash(&self) -> String {
        hex::encode(Sha256::digest(self.header_line().as_bytes()))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = self.header_line();
        out.push('\n');
        for (s, split) in self.samples.iter().zip(&self.splits) {
            let rec = SampleRecord {
                theta_e: s.condition.eye.to_array().to_vec(),
                theta_h: s.condition.head.to_array().to_vec(),
                target: s.condition.target.to_vec(),
                delta_e: s.allocation.delta_eye.to_array().to_vec(),
                delta_h: s.allocation.delta_head.to_array().to_vec(),
                strategy: s.strategy,
                split: *split,
            };
            writeln!(out, "{}", serde_json::to_string(&rec).expect("record serializes")).unwrap();
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DataError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| DataError::Header("empty file".into()))?;
        let header: DatasetHeader =
            serde_json::from_str(first).map_err(|e| DataError::Parse { line: 1, message: e.to_string() })?;
        if header.schema != DATASET_SCHEMA || header.version != DATASET_VERSION {
            return Err(DataError::Header(format!(
                "unsupported schema {} v{}",
                header.schema, header.version
            )));
        }
        let mut samples = Vec::new();
        let mut splits = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let rec: SampleRecord = serde_json::from_str(line).map_err(|e| DataError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            let sample = rec.to_sample(line_no)?;
            if let Err(message) = check_sample(&sample, &header.generator) {
                return Err(DataError::Invariant {
                    index: samples.len(),
                    line: line_no,
                    message,
                });
            }
            samples.push(sample);
            splits.push(rec.split);
        }
        let n_train = splits.iter().filter(|s| **s == Split::Train).count();
        if samples.len() != header.n_samples || n_train != header.n_train {
            return Err(DataError::Header(format!(
                "header declares {} samples ({} train) but the file has {} ({} train)",
                header.n_samples,
                header.n_train,
                samples.len(),
                n_train
            )));
        }
        Ok(Self {
            header,
            samples,
            splits,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        crate::nets::checkpoint::write_atomic(path, self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    theta_e: Vec<f64>,
    theta_h: Vec<f64>,
    target: Vec<f64>,
    delta_e: Vec<f64>,
    delta_h: Vec<f64>,
    strategy: Strategy,
    split: Split,
}

fn fixed<const N: usize>(v: &[f64], field: &'static str, line: usize) -> Result<[f64; N], DataError> {
    v.try_into().map_err(|_| DataError::Field {
        line,
        field,
        message: format!("expected {N} numbers, found {}", v.len()),
    })
}

impl SampleRecord {
    fn to_sample(&self, line: usize) -> Result<GazeSample, DataError> {
        let [ey, ep] = fixed::<2>(&self.theta_e, "theta_e", line)?;
        let [hy, hp, hr] = fixed::<3>(&self.theta_h, "theta_h", line)?;
        let target = fixed::<3>(&self.target, "target", line)?;
        let [dey, dep] = fixed::<2>(&self.delta_e, "delta_e", line)?;
        let [dhy, dhp, dhr] = fixed::<3>(&self.delta_h, "delta_h", line)?;
        Ok(GazeSample {
            condition: ConditionVector {
                eye: EyePose::new(ey, ep),
                head: HeadPose::new(hy, hp, hr),
                target,
            },
            allocation: MotionAllocation {
                delta_eye: EyePose::new(dey, dep),
                delta_head: HeadPose::new(dhy, dhp, dhr),
            },
            strategy: self.strategy,
        })
    }
}

/// Angle between two directions, radians.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}
