//! Conditional VQ-VAE over eye/head rotation increments.
//!
//! Data flow for one sample `(y, c)`:
//!
//! ```text
//! y ──► reconstruction-encoder ──┐
//!                                ├─► fusion-in ──► z_e ──► nearest code ──► z_q
//! c ──► condition-encoder ───────┤                                          │
//!                                └──────────────► fusion-out ◄──────────────┘
//!                                                     │
//!                                                  decoder ──► ŷ
//! ```
//!
//! Fusion modules are a concatenation followed by one affine layer. The
//! condition features feed both fusion modules.

use nalgebra::Matrix3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nets::checkpoint::{Checkpoint, CheckpointError};
use crate::nets::{Activation, DenseNetwork, LayerShape, NetError, ParamGroup, Parameterized};
use crate::so3::{self, DomainError, EyePose, HeadPose};

/// Targets closer than this to the shared rotation center are rejected.
pub const MIN_TARGET_NORM: f64 = 0.05;

pub const SECTION_RECON_ENCODER: &str = "reconstruction-encoder";
pub const SECTION_COND_ENCODER: &str = "condition-encoder";
pub const SECTION_FUSION_IN: &str = "fusion-in";
pub const SECTION_CODEBOOK: &str = "codebook";
pub const SECTION_FUSION_OUT: &str = "fusion-out";
pub const SECTION_DECODER: &str = "decoder";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("codebook is empty")]
    EmptyCodebook,
    #[error("invalid condition: {0}")]
    InvalidCondition(String),
    #[error("invalid motion allocation: {0}")]
    InvalidAllocation(String),
    #[error("non-finite value in loss term `{0}`")]
    NonFinite(&'static str),
    #[error("code index {index} out of range for a codebook of {size}")]
    CodeOutOfRange { index: usize, size: usize },
    #[error("prior was trained against stage-1 checkpoint {expected}, but got {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// `c = {eye pose, head pose, 3D target in the robot base frame}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionVector {
    pub eye: EyePose,
    pub head: HeadPose,
    /// Meters.
    pub target: [f64; 3],
}

impl ConditionVector {
    pub fn new(eye: EyePose, head: HeadPose, target: [f64; 3]) -> Result<Self, ModelError> {
        let c = Self { eye, head, target };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.features().iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidCondition("non-finite component".into()));
        }
        let norm = self.target.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= MIN_TARGET_NORM {
            return Err(ModelError::InvalidCondition(format!(
                "target {:?} is within {MIN_TARGET_NORM} m of the rotation center",
                self.target
            )));
        }
        Ok(())
    }

    /// Eye yaw, eye pitch, head yaw, head pitch, head roll, target x, y, z.
    pub fn features(&self) -> [f64; 8] {
        [
            self.eye.yaw,
            self.eye.pitch,
            self.head.yaw,
            self.head.pitch,
            self.head.roll,
            self.target[0],
            self.target[1],
            self.target[2],
        ]
    }

    /// [`features`](Self::features) with the target divided by `target_scale`.
    pub fn network_input(&self, target_scale: f64) -> [f64; 8] {
        let mut f = self.features();
        for v in &mut f[5..] {
            *v /= target_scale;
        }
        f
    }
}

/// `y = {Δθ_eye, Δθ_head}`, radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionAllocation {
    pub delta_eye: EyePose,
    pub delta_head: HeadPose,
}

impl MotionAllocation {
    pub fn new(delta_eye: EyePose, delta_head: HeadPose) -> Result<Self, ModelError> {
        let y = Self {
            delta_eye,
            delta_head,
        };
        y.validate()?;
        Ok(y)
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        Self {
            delta_eye: EyePose::new(v[0], v[1]),
            delta_head: HeadPose::new(v[2], v[3], v[4]),
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [
            self.delta_eye.yaw,
            self.delta_eye.pitch,
            self.delta_head.yaw,
            self.delta_head.pitch,
            self.delta_head.roll,
        ]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for v in self.to_array() {
            if !v.is_finite() || v.abs() > std::f64::consts::PI {
                return Err(ModelError::InvalidAllocation(format!(
                    "component {v} not finite or beyond pi"
                )));
            }
        }
        Ok(())
    }

    /// Target poses `θ + Δθ`, wrapped.
    pub fn target_poses(&self, c: &ConditionVector) -> Result<(EyePose, HeadPose), DomainError> {
        Ok((
            so3::compose_target_pose(&c.eye, &self.delta_eye)?,
            so3::compose_target_pose(&c.head, &self.delta_head)?,
        ))
    }

    /// Target rotation matrices of eye and head.
    pub fn target_rotations(
        &self,
        c: &ConditionVector,
    ) -> Result<(Matrix3<f64>, Matrix3<f64>), DomainError> {
        let (e, h) = self.target_poses(c)?;
        Ok((
            *so3::euler_to_matrix(&e)?.matrix(),
            *so3::euler_to_matrix(&h)?.matrix(),
        ))
    }
}

/// Geodesic distances (radians) between the eye and head target rotations of
/// a predicted and a reference allocation under the same condition.
pub fn target_pose_errors(
    predicted: &MotionAllocation,
    truth: &MotionAllocation,
    c: &ConditionVector,
) -> Result<(f64, f64), DomainError> {
    let (pe, ph) = predicted.target_rotations(c)?;
    let (te, th) = truth.target_rotations(c)?;
    Ok((
        so3::geodesic_distance_raw(&pe, &te),
        so3::geodesic_distance_raw(&ph, &th),
    ))
}

/// K embedding vectors of dimension D, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    entries: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationResult {
    /// Zero-based code index.
    pub index: usize,
    pub z_e: Vec<f64>,
    pub z_q: Vec<f64>,
}

impl Codebook {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self, ModelError> {
        if dim == 0 || !entries.len().is_multiple_of(dim) {
            return Err(ModelError::Config(format!(
                "{} values cannot form entries of dimension {dim}",
                entries.len()
            )));
        }
        Ok(Self { dim, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        let dim = rows.first().map_or(1, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(ModelError::Config("ragged codebook rows".into()));
        }
        Self::new(dim, rows.concat())
    }

    /// Entries uniform in [-0.5, 0.5]^D.
    pub fn random<R: Rng + ?Sized>(size: usize, dim: usize, rng: &mut R) -> Self {
        let entries = (0..size * dim).map(|_| rng.random_range(-0.5..=0.5)).collect();
        Self { dim, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, k: usize) -> &[f64] {
        &self.entries[k * self.dim..(k + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.entries
    }

    /// Nearest entry by squared Euclidean distance; ties go to the smallest index.
    pub fn quantize(&self, z_e: &[f64]) -> Result<QuantizationResult, ModelError> {
        if self.is_empty() {
            return Err(ModelError::EmptyCodebook);
        }
        if z_e.len() != self.dim {
            return Err(NetError::Dimension {
                what: "latent",
                expected: self.dim,
                found: z_e.len(),
            }
            .into());
        }
        let mut best = (0, f64::INFINITY);
        for (k, e) in self.entries.chunks_exact(self.dim).enumerate() {
            let d: f64 = e.iter().zip(z_e).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        Ok(QuantizationResult {
            index: best.0,
            z_e: z_e.to_vec(),
            z_q: self.entry(best.0).to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VqVaeConfig {
    pub codebook_size: usize,
    pub latent_dim: usize,
    pub hidden_width: usize,
    pub feature_dim: usize,
    pub beta: f64,
    pub lambda_rc: f64,
    /// Condition targets are divided by this before entering the networks.
    pub target_scale: f64,
}

impl Default for VqVaeConfig {
    fn default() -> Self {
        Self {
            codebook_size: 10,
            latent_dim: 8,
            hidden_width: 64,
            feature_dim: 32,
            beta: 0.25,
            lambda_rc: 1.0,
            target_scale: 2.0,
        }
    }
}

impl VqVaeConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.codebook_size == 0 {
            return Err(ModelError::EmptyCodebook);
        }
        if self.latent_dim == 0 || self.hidden_width == 0 || self.feature_dim == 0 {
            return Err(ModelError::Config("network widths must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.lambda_rc >= 0.0 && self.target_scale > 0.0) {
            return Err(ModelError::Config("beta, lambda_rc >= 0 and target_scale > 0".into()));
        }
        Ok(())
    }
}

/// Values of the stage-1 objective for one sample. `commit` already includes
/// the factor beta, so `total = rec + embed + commit`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VqLosses {
    pub total: f64,
    pub rec: f64,
    pub embed: f64,
    pub commit: f64,
    /// Unweighted reconstruction components, radians.
    pub eye_error: f64,
    pub head_error: f64,
    pub code: usize,
}

/// Multipliers on the three stage-1 terms, for isolating gradient paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub rec: f64,
    pub embed: f64,
    pub commit: f64,
}

impl Default for TermWeights {
    fn default() -> Self {
        Self {
            rec: 1.0,
            embed: 1.0,
            commit: 1.0,
        }
    }
}

/// Reconstruction loss `d(R̂_eye, R_eye) + λ d(R̂_head, R_head)` and its gradient
/// with respect to the predicted increments.
///
/// Returns `(eye distance, head distance, d loss / d ŷ)`.
pub(crate) fn geodesic_pair_with_grad(
    predicted: &[f64],
    c: &ConditionVector,
    truth_eye: &Matrix3<f64>,
    truth_head: &Matrix3<f64>,
    lambda: f64,
) -> (f64, f64, [f64; 5]) {
    let eye_angles = [c.eye.yaw + predicted[0], c.eye.pitch + predicted[1], 0.0];
    let head_angles = [
        c.head.yaw + predicted[2],
        c.head.pitch + predicted[3],
        c.head.roll + predicted[4],
    ];
    let (de, ge) = so3::geodesic_with_euler_grad(eye_angles, truth_eye);
    let (dh, gh) = so3::geodesic_with_euler_grad(head_angles, truth_head);
    (
        de,
        dh,
        [ge[0], ge[1], lambda * gh[0], lambda * gh[1], lambda * gh[2]],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqVae {
    config: VqVaeConfig,
    recon_encoder: DenseNetwork,
    cond_encoder: DenseNetwork,
    fusion_in: DenseNetwork,
    codebook: Codebook,
    fusion_out: DenseNetwork,
    decoder: DenseNetwork,
}

fn affine<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Result<DenseNetwork, NetError> {
    DenseNetwork::with_layers(
        vec![LayerShape {
            inputs,
            outputs,
            activation: Activation::Identity,
        }],
        rng,
    )
}

impl VqVae {
    pub fn new<R: Rng + ?Sized>(config: VqVaeConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let VqVaeConfig {
            codebook_size,
            latent_dim: d,
            hidden_width: h,
            feature_dim: f,
            ..
        } = config;
        Ok(Self {
            config,
            recon_encoder: DenseNetwork::mlp(&[5, h, h, f], rng)?,
            cond_encoder: DenseNetwork::mlp(&[8, h, h, f], rng)?,
            fusion_in: affine(2 * f, d, rng)?,
            codebook: Codebook::random(codebook_size, d, rng),
            fusion_out: affine(d + f, f, rng)?,
            decoder: DenseNetwork::mlp(&[f, h, h, 5], rng)?,
        })
    }

    pub fn config(&self) -> &VqVaeConfig {
        &self.config
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn codebook_mut(&mut self) -> &mut Codebook {
        &mut self.codebook
    }

    fn condition_features(&self, c: &ConditionVector) -> Result<Vec<f64>, ModelError> {
        c.validate()?;
        Ok(self
            .cond_encoder
            .forward(&c.network_input(self.config.target_scale))?)
    }

    pub fn encode(&self, y: &MotionAllocation, c: &ConditionVector) -> Result<Vec<f64>, ModelError> {
        let hy = self.recon_encoder.forward(&y.to_array())?;
        let hc = self.condition_features(c)?;
        Ok(self.fusion_in.forward(&[hy, hc].concat())?)
    }

    pub fn quantize(&self, z_e: &[f64]) -> Result<QuantizationResult, ModelError> {
        self.codebook.quantize(z_e)
    }

    pub fn decode(&self, z_q: &[f64], c: &ConditionVector) -> Result<MotionAllocation, ModelError> {
        if z_q.len() != self.config.latent_dim {
            return Err(NetError::Dimension {
                what: "quantized latent",
                expected: self.config.latent_dim,
                found: z_q.len(),
            }
            .into());
        }
        let hc = self.condition_features(c)?;
        let u = self.fusion_out.forward(&[z_q, &hc[..]].concat())?;
        let out = self.decoder.forward(&u)?;
        Ok(MotionAllocation::from_array([out[0], out[1], out[2], out[3], out[4]]))
    }

    pub fn decode_code(&self, code: usize, c: &ConditionVector) -> Result<MotionAllocation, ModelError> {
        if code >= self.codebook.len() {
            return Err(ModelError::CodeOutOfRange {
                index: code,
                size: self.codebook.len(),
            });
        }
        self.decode(self.codebook.entry(code), c)
    }

    /// Teacher-forced reconstruction: the code is the one the encoder selects.
    pub fn reconstruct(
        &self,
        y: &MotionAllocation,
        c: &ConditionVector,
    ) -> Result<(QuantizationResult, MotionAllocation), ModelError> {
        let q = self.quantize(&self.encode(y, c)?)?;
        let y_hat = self.decode(&q.z_q, c)?;
        Ok((q, y_hat))
    }

    pub fn vq_loss(&self, y: &MotionAllocation, c: &ConditionVector) -> Result<VqLosses, ModelError> {
        let (q, y_hat) = self.reconstruct(y, c)?;
        let (te, th) = y.target_rotations(c)?;
        let (de, dh, _) = geodesic_pair_with_grad(&y_hat.to_array(), c, &te, &th, self.config.lambda_rc);
        let sq: f64 = q.z_e.iter().zip(&q.z_q).map(|(a, b)| (a - b) * (a - b)).sum();
        self.assemble(de, dh, sq, q.index)
    }

    fn assemble(&self, de: f64, dh: f64, sq: f64, code: usize) -> Result<VqLosses, ModelError> {
        let rec = de + self.config.lambda_rc * dh;
        let embed = sq;
        let commit = self.config.beta * sq;
        for (name, v) in [("rec", rec), ("embed", embed), ("commit", commit)] {
            if !v.is_finite() {
                return Err(ModelError::NonFinite(name));
            }
        }
        Ok(VqLosses {
            total: rec + embed + commit,
            rec,
            embed,
            commit,
            eye_error: de,
            head_error: dh,
            code,
        })
    }

    /// Forward and backward for one sample, adding `weights`-scaled gradients
    /// into `grads` (ordered like [`Parameterized::param_groups`]).
    ///
    /// Gradient routing: the reconstruction gradient at `z_q` is copied to
    /// `z_e` unchanged; the embed term only reaches the selected codebook
    /// entry; the commit term only reaches the encoder side.
    pub fn accumulate_gradients(
        &mut self,
        y: &MotionAllocation,
        c: &ConditionVector,
        weights: TermWeights,
        grads: &mut [Vec<f64>],
    ) -> Result<VqLosses, ModelError> {
        c.validate()?;
        let f = self.config.feature_dim;
        let d = self.config.latent_dim;
        let (te, th) = y.target_rotations(c)?;

        let hy = self.recon_encoder.forward_train(&y.to_array())?;
        let hc = self
            .cond_encoder
            .forward_train(&c.network_input(self.config.target_scale))?;
        let z_e = self.fusion_in.forward_train(&[hy, hc.clone()].concat())?;
        let q = self.codebook.quantize(&z_e)?;
        let u = self.fusion_out.forward_train(&[&q.z_q[..], &hc[..]].concat())?;
        let y_hat = self.decoder.forward_train(&u)?;

        let (de, dh, g_yhat) = geodesic_pair_with_grad(&y_hat, c, &te, &th, self.config.lambda_rc);
        let sq: f64 = z_e.iter().zip(&q.z_q).map(|(a, b)| (a - b) * (a - b)).sum();
        let losses = self.assemble(de, dh, sq, q.index)?;

        let [g_rec, g_cond, g_fin, g_book, g_fout, g_dec] = grads else {
            return Err(NetError::Dimension {
                what: "gradient groups",
                expected: 6,
                found: grads.len(),
            }
            .into());
        };

        let upstream: Vec<f64> = g_yhat.iter().map(|g| g * weights.rec).collect();
        let g_u = self.decoder.backward(&upstream, g_dec)?;
        let g_cat = self.fusion_out.backward(&g_u, g_fout)?;
        let (g_zq, g_hc_dec) = g_cat.split_at(d);

        // straight-through for the reconstruction path, plus the commit term
        let commit_scale = 2.0 * self.config.beta * weights.commit;
        let g_ze: Vec<f64> = g_zq
            .iter()
            .zip(z_e.iter().zip(&q.z_q))
            .map(|(g, (ze, zq))| g + commit_scale * (ze - zq))
            .collect();
        // embed term pulls the selected entry toward sg[z_e]
        let embed_scale = 2.0 * weights.embed;
        let book = &mut g_book[q.index * d..(q.index + 1) * d];
        for ((g, zq), ze) in book.iter_mut().zip(&q.z_q).zip(&z_e) {
            *g += embed_scale * (zq - ze);
        }

        let g_fused = self.fusion_in.backward(&g_ze, g_fin)?;
        let (g_hy, g_hc_enc) = g_fused.split_at(f);
        self.recon_encoder.backward(g_hy, g_rec)?;
        let g_hc: Vec<f64> = g_hc_enc.iter().zip(g_hc_dec).map(|(a, b)| a + b).collect();
        self.cond_encoder.backward(&g_hc, g_cond)?;
        Ok(losses)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("vqvae");
        ck.add_network(SECTION_RECON_ENCODER, &self.recon_encoder);
        ck.add_network(SECTION_COND_ENCODER, &self.cond_encoder);
        ck.add_network(SECTION_FUSION_IN, &self.fusion_in);
        ck.add_tensor(
            SECTION_CODEBOOK,
            vec![self.codebook.len(), self.codebook.dim()],
            self.codebook.values().to_vec(),
        );
        ck.add_network(SECTION_FUSION_OUT, &self.fusion_out);
        ck.add_network(SECTION_DECODER, &self.decoder);
        ck.metadata.insert(
            "model_config".into(),
            serde_json::to_value(self.config).expect("config serializes"),
        );
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        ck.expect_kind("vqvae")?;
        let config: VqVaeConfig = ck
            .metadata
            .get("model_config")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| CheckpointError::Metadata(e.to_string()))?
            .ok_or_else(|| CheckpointError::Metadata("missing model_config".into()))?;
        config.validate()?;
        let book = ck.tensor_with_shape(SECTION_CODEBOOK, &[config.codebook_size, config.latent_dim])?;
        let model = Self {
            config,
            recon_encoder: ck.network(SECTION_RECON_ENCODER)?,
            cond_encoder: ck.network(SECTION_COND_ENCODER)?,
            fusion_in: ck.network(SECTION_FUSION_IN)?,
            codebook: Codebook::new(config.latent_dim, book.data.clone())?,
            fusion_out: ck.network(SECTION_FUSION_OUT)?,
            decoder: ck.network(SECTION_DECODER)?,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<(), ModelError> {
        let VqVaeConfig {
            latent_dim: d,
            feature_dim: f,
            ..
        } = self.config;
        let ok = self.recon_encoder.input_dim() == 5
            && self.recon_encoder.output_dim() == f
            && self.cond_encoder.input_dim() == 8
            && self.cond_encoder.output_dim() == f
            && self.fusion_in.input_dim() == 2 * f
            && self.fusion_in.output_dim() == d
            && self.fusion_out.input_dim() == d + f
            && self.decoder.input_dim() == self.fusion_out.output_dim()
            && self.decoder.output_dim() == 5;
        if ok {
            Ok(())
        } else {
            Err(ModelError::Config("checkpoint sections do not chain".into()))
        }
    }

    /// Identity of the parameters (see [`Checkpoint::fingerprint`]).
    pub fn fingerprint(&self) -> String {
        self.to_checkpoint().fingerprint()
    }
}

impl Parameterized for VqVae {
    fn param_groups(&mut self) -> Vec<ParamGroup<'_>> {
        vec![
            ParamGroup {
                name: SECTION_RECON_ENCODER.into(),
                values: self.recon_encoder.params_mut(),
            },
            ParamGroup {
                name: SECTION_COND_ENCODER.into(),
                values: self.cond_encoder.params_mut(),
            },
            ParamGroup {
                name: SECTION_FUSION_IN.into(),
                values: self.fusion_in.params_mut(),
            },
            ParamGroup {
                name: SECTION_CODEBOOK.into(),
                values: &mut self.codebook.entries,
            },
            ParamGroup {
                name: SECTION_FUSION_OUT.into(),
                values: self.fusion_out.params_mut(),
            },
            ParamGroup {
                name: SECTION_DECODER.into(),
                values: self.decoder.params_mut(),
            },
        ]
    }
}
