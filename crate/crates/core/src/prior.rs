//! Conditional prior `p(z | c)` over codebook indices.
//!
//! Training uses focal loss against codes recorded from the frozen VQ-VAE plus
//! a motion-consistency term evaluated at the argmax code. The argmax is
//! discrete, so by default that term carries no gradient; it shows up in the
//! reported loss and in checkpoint selection only.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nets::checkpoint::{Checkpoint, CheckpointError};
use crate::nets::{DenseNetwork, NetError, ParamGroup, Parameterized};
use crate::vqvae::{geodesic_pair_with_grad, ConditionVector, ModelError, MotionAllocation, VqVae};

pub const SECTION_PRIOR: &str = "prior-network";

/// Probabilities are floored at this value before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CodeDistribution(Vec<f64>);

impl CodeDistribution {
    /// Numerically stable softmax.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        Self(exp.into_iter().map(|e| e / sum).collect())
    }

    pub fn from_probs(probs: Vec<f64>) -> Result<Self, ModelError> {
        if probs.is_empty() {
            return Err(ModelError::EmptyCodebook);
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ModelError::Config("probability outside [0, 1]".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ModelError::Config(format!("probabilities sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn one_hot(size: usize, k: usize) -> Self {
        let mut p = vec![0.0; size];
        p[k] = 1.0;
        Self(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most probable code; ties go to the smallest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = k;
            }
        }
        best
    }

    /// Codes with probability strictly above `threshold`, most probable first.
    pub fn codes_above(&self, threshold: f64) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self
            .0
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, p)| p > threshold)
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }
}

/// Draws `k` with probability `π_k`.
pub fn sample_code<R: Rng + ?Sized>(pi: &CodeDistribution, rng: &mut R) -> usize {
    sample_code_with_floor(pi, 0.0, rng)
}

/// Like [`sample_code`], restricted to codes with `π_k > floor` (renormalized).
/// Falls back to the argmax when no code clears the floor.
pub fn sample_code_with_floor<R: Rng + ?Sized>(pi: &CodeDistribution, floor: f64, rng: &mut R) -> usize {
    let weights: Vec<f64> = pi.0.iter().map(|&p| if p > floor { p } else { 0.0 }).collect();
    match WeightedIndex::new(&weights) {
        Ok(dist) => dist.sample(rng),
        Err(_) => pi.argmax(),
    }
}

/// `-(1 - p)^γ log p` with `p = π[label]` floored at [`PROB_FLOOR`].
pub fn focal_loss(pi: &CodeDistribution, label: usize, gamma: f64) -> f64 {
    let p = pi.0[label].max(PROB_FLOOR);
    -(1.0 - p).powf(gamma) * p.ln()
}

/// Gradient of [`focal_loss`] with respect to the logits that produced `pi`.
pub fn focal_loss_logit_grad(pi: &CodeDistribution, label: usize, gamma: f64) -> Vec<f64> {
    let raw = pi.0[label];
    let p = raw.max(PROB_FLOOR);
    let one_minus = 1.0 - p;
    let dl_dp = if raw < PROB_FLOOR {
        // the floor is active, so the loss is locally constant in p
        0.0
    } else {
        let decay = if gamma == 0.0 {
            0.0
        } else {
            gamma * one_minus.powf(gamma - 1.0) * p.ln()
        };
        decay - one_minus.powf(gamma) / p
    };
    pi.0
        .iter()
        .enumerate()
        .map(|(j, &pj)| {
            let indicator = if j == label { 1.0 } else { 0.0 };
            dl_dp * raw * (indicator - pj)
        })
        .collect()
}

/// `d(R̃_eye, R_eye) + λ d(R̃_head, R_head)` where `R̃` come from decoding `code`
/// under `c` with the frozen stage-1 model.
pub fn motion_consistency_loss(
    vq: &VqVae,
    code: usize,
    c: &ConditionVector,
    truth: &MotionAllocation,
    lambda_mc: f64,
) -> Result<f64, ModelError> {
    let decoded = vq.decode_code(code, c)?;
    let (te, th) = truth.target_rotations(c)?;
    let (de, dh, _) = geodesic_pair_with_grad(&decoded.to_array(), c, &te, &th, lambda_mc);
    let v = de + lambda_mc * dh;
    if !v.is_finite() {
        return Err(ModelError::NonFinite("motion-consistency"));
    }
    Ok(v)
}

/// How the motion-consistency term reaches the prior parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McGradient {
    /// Literal argmax: no gradient path.
    #[default]
    None,
    /// Experimental relaxation: the term is replaced by its expectation under
    /// `π`, `Σ_k π_k L_mc(k)`, which is differentiable in the logits.
    Expected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub codebook_size: usize,
    pub hidden_width: usize,
    pub gamma: f64,
    pub eta: f64,
    pub lambda_mc: f64,
    pub mc_gradient: McGradient,
    pub target_scale: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            codebook_size: 10,
            hidden_width: 64,
            gamma: 2.0,
            eta: 1.0,
            lambda_mc: 1.0,
            mc_gradient: McGradient::None,
            target_scale: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PriorLosses {
    pub total: f64,
    pub focal: f64,
    pub mc: f64,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalPrior {
    config: PriorConfig,
    net: DenseNetwork,
    stage1_fingerprint: String,
}

impl ConditionalPrior {
    /// A fresh prior bound to the given stage-1 model.
    pub fn new<R: Rng + ?Sized>(config: PriorConfig, vq: &VqVae, rng: &mut R) -> Result<Self, ModelError> {
        if config.codebook_size != vq.codebook().len() {
            return Err(ModelError::Config(format!(
                "prior over {} codes but the codebook has {}",
                config.codebook_size,
                vq.codebook().len()
            )));
        }
        if !(config.gamma >= 0.0 && config.eta >= 0.0 && config.lambda_mc >= 0.0) {
            return Err(ModelError::Config("gamma, eta and lambda_mc must be >= 0".into()));
        }
        let h = config.hidden_width;
        Ok(Self {
            config,
            net: DenseNetwork::mlp(&[8, h, h, config.codebook_size], rng)?,
            stage1_fingerprint: vq.fingerprint(),
        })
    }

    pub fn config(&self) -> &PriorConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut PriorConfig {
        &mut self.config
    }

    pub fn network_mut(&mut self) -> &mut DenseNetwork {
        &mut self.net
    }

    pub fn stage1_fingerprint(&self) -> &str {
        &self.stage1_fingerprint
    }

    pub fn logits(&self, c: &ConditionVector) -> Result<Vec<f64>, ModelError> {
        c.validate()?;
        Ok(self.net.forward(&c.network_input(self.config.target_scale))?)
    }

    pub fn forward(&self, c: &ConditionVector) -> Result<CodeDistribution, ModelError> {
        Ok(CodeDistribution::from_logits(&self.logits(c)?))
    }

    /// `focal + η · motion-consistency` at the argmax code.
    pub fn prior_loss(
        &self,
        vq: &VqVae,
        c: &ConditionVector,
        truth: &MotionAllocation,
        label: usize,
    ) -> Result<PriorLosses, ModelError> {
        self.check_label(label)?;
        let pi = self.forward(c)?;
        let predicted = pi.argmax();
        let focal = focal_loss(&pi, label, self.config.gamma);
        let mc = motion_consistency_loss(vq, predicted, c, truth, self.config.lambda_mc)?;
        Ok(PriorLosses {
            total: focal + self.config.eta * mc,
            focal,
            mc,
            predicted,
        })
    }

    fn check_label(&self, label: usize) -> Result<(), ModelError> {
        if label >= self.config.codebook_size {
            return Err(ModelError::CodeOutOfRange {
                index: label,
                size: self.config.codebook_size,
            });
        }
        Ok(())
    }

    /// Forward/backward for one sample; gradients are added into `grads`.
    pub fn accumulate_gradients(
        &mut self,
        vq: &VqVae,
        c: &ConditionVector,
        truth: &MotionAllocation,
        label: usize,
        grads: &mut [Vec<f64>],
    ) -> Result<PriorLosses, ModelError> {
        self.check_label(label)?;
        c.validate()?;
        let logits = self.net.forward_train(&c.network_input(self.config.target_scale))?;
        let pi = CodeDistribution::from_logits(&logits);
        let predicted = pi.argmax();
        let gamma = self.config.gamma;
        let eta = self.config.eta;
        let focal = focal_loss(&pi, label, gamma);
        let mut g_logits = focal_loss_logit_grad(&pi, label, gamma);

        let mc = match self.config.mc_gradient {
            McGradient::None => motion_consistency_loss(vq, predicted, c, truth, self.config.lambda_mc)?,
            McGradient::Expected => {
                let per_code = (0..pi.len())
                    .map(|k| motion_consistency_loss(vq, k, c, truth, self.config.lambda_mc))
                    .collect::<Result<Vec<_>, _>>()?;
                let expected: f64 = per_code.iter().zip(pi.probs()).map(|(l, p)| l * p).sum();
                for ((g, l), p) in g_logits.iter_mut().zip(&per_code).zip(pi.probs()) {
                    *g += eta * p * (l - expected);
                }
                expected
            }
        };
        if !focal.is_finite() {
            return Err(ModelError::NonFinite("focal"));
        }
        let [g_net] = grads else {
            return Err(NetError::Dimension {
                what: "gradient groups",
                expected: 1,
                found: grads.len(),
            }
            .into());
        };
        self.net.backward(&g_logits, g_net)?;
        Ok(PriorLosses {
            total: focal + eta * mc,
            focal,
            mc,
            predicted,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("prior");
        ck.add_network(SECTION_PRIOR, &self.net);
        ck.metadata.insert(
            "prior_config".into(),
            serde_json::to_value(self.config).expect("config serializes"),
        );
        ck.metadata.insert("gamma".into(), self.config.gamma.into());
        ck.metadata.insert("eta".into(), self.config.eta.into());
        ck.metadata.insert(
            "stage1_fingerprint".into(),
            self.stage1_fingerprint.clone().into(),
        );
        ck
    }

    /// Restores a prior and checks it was trained against `vq`.
    pub fn from_checkpoint(ck: &Checkpoint, vq: &VqVae) -> Result<Self, ModelError> {
        ck.expect_kind("prior")?;
        let config: PriorConfig = ck
            .metadata
            .get("prior_config")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| CheckpointError::Metadata(e.to_string()))?
            .ok_or_else(|| CheckpointError::Metadata("missing prior_config".into()))?;
        let expected = ck
            .metadata
            .get("stage1_fingerprint")
            .and_then(|v| v.as_str())
            .ok_or_else(|| CheckpointError::Metadata("missing stage1_fingerprint".into()))?
            .to_string();
        let found = vq.fingerprint();
        if expected != found {
            return Err(ModelError::FingerprintMismatch { expected, found });
        }
        let net = ck.network(SECTION_PRIOR)?;
        if net.input_dim() != 8 || net.output_dim() != config.codebook_size {
            return Err(ModelError::Config("prior network shape does not match its config".into()));
        }
        Ok(Self {
            config,
            net,
            stage1_fingerprint: expected,
        })
    }
}

impl Parameterized for ConditionalPrior {
    fn param_groups(&mut self) -> Vec<ParamGroup<'_>> {
        vec![ParamGroup {
            name: SECTION_PRIOR.into(),
            values: self.net.params_mut(),
        }]
    }
}
