//! Robot gaze-shift toolkit: SO(3) utilities, a conditional VQ-VAE that splits
//! gaze shifts between eyes and head, its conditional prior, a synthetic
//! dataset generator, the two-stage trainer, and the gaze reasoning pipeline.

pub mod datagen;
pub mod nets;
pub mod prior;
pub mod reasoner;
pub mod so3;
pub mod trainer;
pub mod vqvae;

pub use datagen::{Dataset, GazeSample, GeneratorConfig, Split, Strategy};
pub use nets::checkpoint::{write_atomic, Checkpoint};
pub use prior::{CodeDistribution, ConditionalPrior, PriorConfig};
pub use so3::{EyePose, HeadPose, RotationMatrix};
pub use trainer::{EpochMetrics, Evaluation, InferenceMode, TrainConfig};
pub use vqvae::{Codebook, ConditionVector, MotionAllocation, VqVae, VqVaeConfig};
