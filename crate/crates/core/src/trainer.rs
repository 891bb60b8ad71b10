//! Two-stage training: the conditional VQ-VAE first, then the conditional
//! prior against codes recorded from the frozen VQ-VAE.
//!
//! Gradients are averaged over each mini-batch; the last partial batch is kept.
//! Validation happens once per epoch. Stage 1 validates with the code the
//! encoder selects (teacher-forced), stage 2 with the prior's argmax code.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{Dataset, GazeSample};
use crate::nets::checkpoint::{Checkpoint, CheckpointError};
use crate::nets::{Adam, AdamConfig, LrSchedule, NetError, Parameterized};
use crate::prior::{sample_code_with_floor, CodeDistribution, ConditionalPrior, McGradient, PriorConfig};
use crate::so3::{geodesic_distance_checked, DomainError};
use crate::vqvae::{ConditionVector, ModelError, MotionAllocation, TermWeights, VqVae, VqVaeConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{stage}: non-finite value at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        stage: &'static str,
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("no samples in the {0} split")]
    EmptySplit(&'static str),
    #[error("{0}")]
    Mismatch(String),
    #[error("training configuration: {0}")]
    Config(String),
}

impl From<NetError> for TrainError {
    fn from(e: NetError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
    pub beta: f64,
    pub lambda_rc: f64,
    pub lambda_mc: f64,
    pub eta: f64,
    pub gamma: f64,
    pub codebook_size: usize,
    pub mc_gradient: McGradient,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_epochs: 200,
            stage2_epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            milestones: vec![100, 150],
            decay: 0.5,
            beta: 0.25,
            lambda_rc: 1.0,
            lambda_mc: 1.0,
            eta: 1.0,
            gamma: 2.0,
            codebook_size: 10,
            mc_gradient: McGradient::None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.codebook_size == 0 {
            return Err(TrainError::Config("codebook_size must be positive".into()));
        }
        self.schedule()?;
        self.vq_config().validate()?;
        Ok(())
    }

    pub fn vq_config(&self) -> VqVaeConfig {
        VqVaeConfig {
            codebook_size: self.codebook_size,
            beta: self.beta,
            lambda_rc: self.lambda_rc,
            ..VqVaeConfig::default()
        }
    }

    pub fn prior_config(&self) -> PriorConfig {
        PriorConfig {
            codebook_size: self.codebook_size,
            gamma: self.gamma,
            eta: self.eta,
            lambda_mc: self.lambda_mc,
            mc_gradient: self.mc_gradient,
            ..PriorConfig::default()
        }
    }

    pub fn schedule(&self) -> Result<LrSchedule, TrainError> {
        Ok(LrSchedule::new(self.learning_rate, self.milestones.clone(), self.decay)?)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    /// Fields that differ from the defaults, as `name -> value`.
    pub fn overrides(&self) -> serde_json::Map<String, serde_json::Value> {
        let ours = serde_json::to_value(self).expect("config serializes");
        let base = serde_json::to_value(Self::default()).expect("config serializes");
        let (serde_json::Value::Object(ours), serde_json::Value::Object(base)) = (ours, base) else {
            unreachable!("structs serialize to objects")
        };
        ours.into_iter().filter(|(k, v)| base.get(k) != Some(v)).collect()
    }
}

/// One row of the training curve. Epochs are 1-based; MGD is in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-sample training losses, keyed by term.
    pub train: BTreeMap<String, f64>,
    pub val_eye_mgd: f64,
    pub val_head_mgd: f64,
    /// Fraction of codes selected at least once on the evaluation split.
    pub utilization: f64,
    /// Stage 2 only.
    pub top1_accuracy: Option<f64>,
}

impl EpochMetrics {
    pub fn summed_mgd(&self) -> f64 {
        self.val_eye_mgd + self.val_head_mgd
    }
}

/// Index of the first row with the smallest summed MGD.
pub fn best_epoch_index(series: &[EpochMetrics]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, m) in series.iter().enumerate() {
        if best.is_none_or(|b| m.summed_mgd() < series[b].summed_mgd()) {
            best = Some(i);
        }
    }
    best
}

/// CSV over one or more stages: `stage, epoch, lr`, the union of training
/// terms (sorted, blank where a stage lacks the term), validation MGDs,
/// utilization and top-1 accuracy (blank for stage 1).
pub fn metrics_csv(stages: &[(&str, &[EpochMetrics])]) -> String {
    let terms: std::collections::BTreeSet<&String> =
        stages.iter().flat_map(|(_, rows)| rows.iter().flat_map(|m| m.train.keys())).collect();
    let mut out = String::from("stage,epoch,lr");
    for t in &terms {
        write!(out, ",train_{t}").unwrap();
    }
    out.push_str(",val_eye_mgd_deg,val_head_mgd_deg,utilization,top1_accuracy\n");
    for (stage, rows) in stages {
        for m in rows.iter() {
            write!(out, "{stage},{},{}", m.epoch, m.lr).unwrap();
            for t in &terms {
                match m.train.get(*t) {
                    Some(v) => write!(out, ",{v}").unwrap(),
                    None => out.push(','),
                }
            }
            let top1 = m.top1_accuracy.map(|a| a.to_string()).unwrap_or_default();
            writeln!(out, ",{},{},{},{}", m.val_eye_mgd, m.val_head_mgd, m.utilization, top1).unwrap();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Eye,
    Head,
}

/// Mean geodesic distance, degrees, between predicted and true target poses.
pub fn mgd(
    predictions: &[MotionAllocation],
    truths: &[MotionAllocation],
    conditions: &[ConditionVector],
    component: Component,
) -> Result<f64, TrainError> {
    if predictions.is_empty() {
        return Err(DomainError::NonFinite("mean over an empty sample list").into());
    }
    if predictions.len() != truths.len() || truths.len() != conditions.len() {
        return Err(TrainError::Mismatch(format!(
            "mgd over {} predictions, {} truths, {} conditions",
            predictions.len(),
            truths.len(),
            conditions.len()
        )));
    }
    let mut sum = 0.0;
    for ((p, t), c) in predictions.iter().zip(truths).zip(conditions) {
        let (pe, ph) = p.target_rotations(c)?;
        let (te, th) = t.target_rotations(c)?;
        sum += match component {
            Component::Eye => geodesic_distance_checked(&pe, &te)?,
            Component::Head => geodesic_distance_checked(&ph, &th)?,
        };
    }
    Ok((sum / predictions.len() as f64).to_degrees())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub eye_mgd: f64,
    pub head_mgd: f64,
    pub utilization: f64,
}

fn evaluate(
    samples: &[&GazeSample],
    codebook_size: usize,
    mut predict: impl FnMut(&GazeSample) -> Result<(usize, MotionAllocation), TrainError>,
) -> Result<Evaluation, TrainError> {
    let mut used = vec![false; codebook_size];
    let mut preds = Vec::with_capacity(samples.len());
    for s in samples {
        let (code, y) = predict(s)?;
        used[code] = true;
        preds.push(y);
    }
    let truths: Vec<_> = samples.iter().map(|s| s.allocation).collect();
    let conds: Vec<_> = samples.iter().map(|s| s.condition).collect();
    Ok(Evaluation {
        eye_mgd: mgd(&preds, &truths, &conds, Component::Eye)?,
        head_mgd: mgd(&preds, &truths, &conds, Component::Head)?,
        utilization: used.iter().filter(|u| **u).count() as f64 / codebook_size as f64,
    })
}

/// Teacher-forced reconstruction quality of a stage-1 model.
pub fn evaluate_stage1(vq: &VqVae, samples: &[&GazeSample]) -> Result<Evaluation, TrainError> {
    evaluate(samples, vq.codebook().len(), |s| {
        let (q, y) = vq.reconstruct(&s.allocation, &s.condition)?;
        Ok((q.index, y))
    })
}

/// Quality of prior-argmax decoding.
pub fn evaluate_stage2(vq: &VqVae, prior: &ConditionalPrior, samples: &[&GazeSample]) -> Result<Evaluation, TrainError> {
    evaluate(samples, vq.codebook().len(), |s| {
        let code = prior.forward(&s.condition)?.argmax();
        Ok((code, vq.decode_code(code, &s.condition)?))
    })
}

/// Fraction of samples whose prior argmax equals the code the frozen encoder
/// assigns to the ground-truth allocation.
pub fn top1_accuracy(vq: &VqVae, prior: &ConditionalPrior, samples: &[&GazeSample]) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let codes = record_codes(vq, samples)?;
    let hits = samples
        .iter()
        .zip(&codes.labels)
        .map(|(s, &code)| Ok(usize::from(prior.forward(&s.condition)?.argmax() == code)))
        .sum::<Result<usize, ModelError>>()?;
    Ok(hits as f64 / samples.len() as f64)
}

/// Validation samples, or the training samples when no validation split exists.
fn selection_split(dataset: &Dataset) -> Result<(Vec<&GazeSample>, &'static str), TrainError> {
    let val = dataset.validation();
    if !val.is_empty() {
        return Ok((val, "validation"));
    }
    let train = dataset.train();
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    log::warn!("dataset has no validation split; selecting checkpoints on the training split");
    Ok((train, "train"))
}

fn rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let init = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffle = ChaCha8Rng::seed_from_u64(seed);
    shuffle.set_stream(1);
    (init, shuffle)
}

fn zero_like(model: &mut impl Parameterized) -> Vec<Vec<f64>> {
    model.param_groups().iter().map(|g| vec![0.0; g.values.len()]).collect()
}

fn scale_grads(grads: &mut [Vec<f64>], s: f64) {
    grads.iter_mut().flatten().for_each(|g| *g *= s);
}

fn add_terms(acc: &mut BTreeMap<String, f64>, terms: &[(&str, f64)]) {
    for (k, v) in terms {
        *acc.entry((*k).to_string()).or_default() += v;
    }
}

fn mean_terms(acc: BTreeMap<String, f64>, n: usize) -> BTreeMap<String, f64> {
    acc.into_iter().map(|(k, v)| (k, v / n as f64)).collect()
}

fn metrics_value(m: &EpochMetrics) -> serde_json::Value {
    serde_json::to_value(m).expect("metrics serialize")
}

/// Stage-1 output: the best model, its checkpoint, and the full curve.
#[derive(Debug, Clone)]
pub struct Stage1Result {
    pub model: VqVae,
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

impl Stage1Result {
    pub fn best(&self) -> &EpochMetrics {
        &self.metrics[self.best_epoch - 1]
    }
}

pub fn train_stage1(dataset: &Dataset, config: &TrainConfig) -> Result<Stage1Result, TrainError> {
    config.validate()?;
    let train = dataset.train();
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    let (select, select_name) = selection_split(dataset)?;
    let (mut init_rng, mut shuffle_rng) = rngs(config.seed);
    let mut vq = VqVae::new(config.vq_config(), &mut init_rng)?;
    let mut adam = Adam::new(config.adam(), &mut vq);
    let schedule = config.schedule()?;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut metrics = Vec::with_capacity(config.stage1_epochs);
    let mut best: Option<(usize, VqVae)> = None;
    for epoch in 1..=config.stage1_epochs {
        let lr = schedule.lr_at(epoch - 1);
        adam.set_lr(lr);
        order.shuffle(&mut shuffle_rng);
        let mut terms = BTreeMap::new();
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut grads = zero_like(&mut vq);
            for &i in chunk {
                let s = train[i];
                let l = vq
                    .accumulate_gradients(&s.allocation, &s.condition, TermWeights::default(), &mut grads)
                    .map_err(|e| non_finite("stage 1", epoch, batch, e))?;
                add_terms(
                    &mut terms,
                    &[("total", l.total), ("rec", l.rec), ("embed", l.embed), ("commit", l.commit)],
                );
            }
            scale_grads(&mut grads, 1.0 / chunk.len() as f64);
            adam.step(&mut vq, &grads)
                .map_err(|e| non_finite("stage 1", epoch, batch, e.into()))?;
        }
        let eval = evaluate_stage1(&vq, &select)?;
        let row = EpochMetrics {
            epoch,
            lr,
            train: mean_terms(terms, train.len()),
            val_eye_mgd: eval.eye_mgd,
            val_head_mgd: eval.head_mgd,
            utilization: eval.utilization,
            top1_accuracy: None,
        };
        log::info!(
            "stage 1 epoch {epoch}: loss {:.4}, eye {:.3} deg, head {:.3} deg, utilization {:.2}",
            row.train["total"],
            row.val_eye_mgd,
            row.val_head_mgd,
            row.utilization
        );
        if best.as_ref().is_none_or(|(b, _)| row.summed_mgd() < metrics_at(&metrics, *b).summed_mgd()) {
            best = Some((epoch, vq.clone()));
        }
        metrics.push(row);
    }
    let (best_epoch, model) = best.ok_or_else(|| TrainError::Config("stage1_epochs must be positive".into()))?;
    let mut checkpoint = model.to_checkpoint();
    let meta = &mut checkpoint.metadata;
    meta.insert("dataset_header_hash".into(), dataset.header_hash().into());
    meta.insert("train_config".into(), serde_json::to_value(config).expect("config serializes"));
    meta.insert("config_overrides".into(), config.overrides().into());
    meta.insert("selection_split".into(), select_name.into());
    meta.insert("best_epoch".into(), best_epoch.into());
    meta.insert("best_metrics".into(), metrics_value(&metrics[best_epoch - 1]));
    Ok(Stage1Result {
        model,
        checkpoint,
        metrics,
        best_epoch,
    })
}

fn metrics_at(series: &[EpochMetrics], epoch: usize) -> &EpochMetrics {
    &series[epoch - 1]
}

fn non_finite(stage: &'static str, epoch: usize, batch: usize, e: ModelError) -> TrainError {
    match e {
        ModelError::NonFinite(_) | ModelError::Net(NetError::NonFiniteGradient(_)) => TrainError::NonFinite {
            stage,
            epoch,
            batch,
            detail: e.to_string(),
        },
        other => other.into(),
    }
}

/// Codes the frozen encoder assigns to the training samples (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeLabels {
    pub stage1_fingerprint: String,
    pub labels: Vec<usize>,
}

impl CodeLabels {
    pub fn check(&self, vq: &VqVae) -> Result<(), TrainError> {
        let found = vq.fingerprint();
        if found != self.stage1_fingerprint {
            return Err(ModelError::FingerprintMismatch {
                expected: self.stage1_fingerprint.clone(),
                found,
            }
            .into());
        }
        Ok(())
    }
}

pub fn record_codes(vq: &VqVae, samples: &[&GazeSample]) -> Result<CodeLabels, TrainError> {
    let labels = samples
        .iter()
        .map(|s| Ok(vq.quantize(&vq.encode(&s.allocation, &s.condition)?)?.index))
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(CodeLabels {
        stage1_fingerprint: vq.fingerprint(),
        labels,
    })
}

#[derive(Debug, Clone)]
pub struct Stage2Result {
    pub prior: ConditionalPrior,
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

impl Stage2Result {
    pub fn best(&self) -> &EpochMetrics {
        &self.metrics[self.best_epoch - 1]
    }
}

/// Trains the prior against `labels` (aligned with `dataset.train()`); `vq`
/// is only ever borrowed immutably.
pub fn train_stage2(
    vq: &VqVae,
    labels: &CodeLabels,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<Stage2Result, TrainError> {
    config.validate()?;
    labels.check(vq)?;
    let train = dataset.train();
    if labels.labels.len() != train.len() {
        return Err(TrainError::Mismatch(format!(
            "{} code labels for {} training samples",
            labels.labels.len(),
            train.len()
        )));
    }
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    let (select, select_name) = selection_split(dataset)?;
    let select_codes = record_codes(vq, &select)?.labels;

    let (mut init_rng, mut shuffle_rng) = rngs(config.seed);
    // separate from the stage-1 init stream
    init_rng.set_stream(2);
    let mut prior = ConditionalPrior::new(config.prior_config(), vq, &mut init_rng)?;
    let mut adam = Adam::new(config.adam(), &mut prior);
    let schedule = config.schedule()?;
    shuffle_rng.set_stream(3);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut metrics = Vec::with_capacity(config.stage2_epochs);
    let mut best: Option<(usize, ConditionalPrior)> = None;
    for epoch in 1..=config.stage2_epochs {
        let lr = schedule.lr_at(epoch - 1);
        adam.set_lr(lr);
        order.shuffle(&mut shuffle_rng);
        let mut terms = BTreeMap::new();
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut grads = zero_like(&mut prior);
            for &i in chunk {
                let s = train[i];
                let l = prior
                    .accumulate_gradients(vq, &s.condition, &s.allocation, labels.labels[i], &mut grads)
                    .map_err(|e| non_finite("stage 2", epoch, batch, e))?;
                add_terms(&mut terms, &[("total", l.total), ("focal", l.focal), ("mc", l.mc)]);
            }
            scale_grads(&mut grads, 1.0 / chunk.len() as f64);
            adam.step(&mut prior, &grads)
                .map_err(|e| non_finite("stage 2", epoch, batch, e.into()))?;
        }
        let eval = evaluate_stage2(vq, &prior, &select)?;
        let hits = select
            .iter()
            .zip(&select_codes)
            .map(|(s, &code)| Ok(usize::from(prior.forward(&s.condition)?.argmax() == code)))
            .sum::<Result<usize, ModelError>>()?;
        let row = EpochMetrics {
            epoch,
            lr,
            train: mean_terms(terms, train.len()),
            val_eye_mgd: eval.eye_mgd,
            val_head_mgd: eval.head_mgd,
            utilization: eval.utilization,
            top1_accuracy: Some(hits as f64 / select.len() as f64),
        };
        log::info!(
            "stage 2 epoch {epoch}: loss {:.4}, eye {:.3} deg, head {:.3} deg, top-1 {:.3}",
            row.train["total"],
            row.val_eye_mgd,
            row.val_head_mgd,
            row.top1_accuracy.unwrap_or_default()
        );
        if best.as_ref().is_none_or(|(b, _)| row.summed_mgd() < metrics_at(&metrics, *b).summed_mgd()) {
            best = Some((epoch, prior.clone()));
        }
        metrics.push(row);
    }
    let (best_epoch, prior) = best.ok_or_else(|| TrainError::Config("stage2_epochs must be positive".into()))?;
    let mut checkpoint = prior.to_checkpoint();
    let meta = &mut checkpoint.metadata;
    meta.insert("dataset_header_hash".into(), dataset.header_hash().into());
    meta.insert("train_config".into(), serde_json::to_value(config).expect("config serializes"));
    meta.insert("config_overrides".into(), config.overrides().into());
    meta.insert("selection_split".into(), select_name.into());
    meta.insert("best_epoch".into(), best_epoch.into());
    meta.insert("best_metrics".into(), metrics_value(&metrics[best_epoch - 1]));
    Ok(Stage2Result {
        prior,
        checkpoint,
        metrics,
        best_epoch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum InferenceMode {
    /// Draw from `π`, ignoring codes with probability below `floor`.
    Sample { floor: f64 },
    Argmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub allocation: MotionAllocation,
    pub code: usize,
    pub pi: CodeDistribution,
}

pub fn infer<R: Rng + ?Sized>(
    vq: &VqVae,
    prior: &ConditionalPrior,
    c: &ConditionVector,
    mode: InferenceMode,
    rng: &mut R,
) -> Result<Inference, TrainError> {
    if prior.stage1_fingerprint() != vq.fingerprint() {
        return Err(ModelError::FingerprintMismatch {
            expected: prior.stage1_fingerprint().to_string(),
            found: vq.fingerprint(),
        }
        .into());
    }
    infer_unchecked(vq, prior, c, mode, rng)
}

/// [`infer`] without re-hashing the stage-1 parameters; for callers that have
/// already checked compatibility (e.g. via [`ConditionalPrior::from_checkpoint`]).
pub fn infer_unchecked<R: Rng + ?Sized>(
    vq: &VqVae,
    prior: &ConditionalPrior,
    c: &ConditionVector,
    mode: InferenceMode,
    rng: &mut R,
) -> Result<Inference, TrainError> {
    let pi = prior.forward(c)?;
    let code = match mode {
        InferenceMode::Argmax => pi.argmax(),
        InferenceMode::Sample { floor } => sample_code_with_floor(&pi, floor, rng),
    };
    Ok(Inference {
        allocation: vq.decode_code(code, c)?,
        code,
        pi,
    })
}

/// Probability above which a code counts as a plausible mode.
pub const DIVERSITY_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityProbe {
    /// Codes with `π_k > DIVERSITY_THRESHOLD` per probed condition.
    pub modes: Vec<Vec<usize>>,
    /// Conditions with at least two such codes.
    pub multimodal: usize,
}

impl DiversityProbe {
    pub fn fraction(&self) -> f64 {
        if self.modes.is_empty() {
            0.0
        } else {
            self.multimodal as f64 / self.modes.len() as f64
        }
    }
}

/// Evaluates the prior on the first `n` conditions of `samples`.
pub fn diversity_probe(prior: &ConditionalPrior, samples: &[&GazeSample], n: usize) -> Result<DiversityProbe, TrainError> {
    let modes = samples
        .iter()
        .take(n)
        .map(|s| {
            let pi = prior.forward(&s.condition)?;
            Ok(pi.codes_above(DIVERSITY_THRESHOLD).into_iter().map(|(k, _)| k).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let multimodal = modes.iter().filter(|m| m.len() >= 2).count();
    Ok(DiversityProbe { modes, multimodal })
}
