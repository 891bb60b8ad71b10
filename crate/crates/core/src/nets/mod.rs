//! Small differentiable building blocks: dense networks, Adam, a multi-step
//! learning-rate schedule and the JSON checkpoint container.

mod adam;
pub mod checkpoint;
mod dense;
mod schedule;

use thiserror::Error;

pub use adam::{Adam, AdamConfig, AdamSnapshot};
pub use dense::{Activation, DenseNetwork, LayerShape};
pub use schedule::LrSchedule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("{what}: expected {expected} values, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("backward called without a cached forward pass")]
    NoForwardCache,
    #[error("non-finite gradient in parameter `{0}`; step rejected")]
    NonFiniteGradient(String),
    #[error("invalid optimizer or schedule setting: {0}")]
    Config(String),
}

/// A named, contiguous block of trainable values.
pub struct ParamGroup<'a> {
    pub name: String,
    pub values: &'a mut [f64],
}

/// Models expose their trainable state as an ordered list of named groups.
/// Gradients are kept in a parallel `Vec<Vec<f64>>` with the same order.
pub trait Parameterized {
    fn param_groups(&mut self) -> Vec<ParamGroup<'_>>;

    /// Zeroed gradient buffers matching `param_groups`.
    fn zero_grads(&mut self) -> Vec<Vec<f64>> {
        self.param_groups()
            .iter()
            .map(|g| vec![0.0; g.values.len()])
            .collect()
    }
}
