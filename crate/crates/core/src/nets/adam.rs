use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NetError, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    name: String,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    moments: Vec<Moments>,
}

/// Serializable optimizer state for checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamSnapshot {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: BTreeMap<String, Vec<f64>>,
    pub second_moment: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new<M: Parameterized + ?Sized>(config: AdamConfig, model: &mut M) -> Self {
        let moments = model
            .param_groups()
            .iter()
            .map(|g| Moments {
                name: g.name.clone(),
                m: vec![0.0; g.values.len()],
                v: vec![0.0; g.values.len()],
            })
            .collect();
        Self {
            config,
            step: 0,
            moments,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update. Every gradient is checked before any parameter moves, so a
    /// rejected step leaves both the model and the optimizer untouched.
    pub fn step<M: Parameterized + ?Sized>(
        &mut self,
        model: &mut M,
        grads: &[Vec<f64>],
    ) -> Result<(), NetError> {
        let mut groups = model.param_groups();
        if groups.len() != self.moments.len() || grads.len() != groups.len() {
            return Err(NetError::Dimension {
                what: "parameter groups",
                expected: self.moments.len(),
                found: groups.len().min(grads.len()),
            });
        }
        for ((g, grad), mom) in groups.iter().zip(grads).zip(&self.moments) {
            if g.values.len() != grad.len() || g.values.len() != mom.m.len() {
                return Err(NetError::Dimension {
                    what: "gradient group",
                    expected: g.values.len(),
                    found: grad.len(),
                });
            }
            if let Some(i) = grad.iter().position(|v| !v.is_finite()) {
                return Err(NetError::NonFiniteGradient(format!("{}[{i}]", g.name)));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let decay = 1.0 - lr * weight_decay;
        for ((g, grad), mom) in groups.iter_mut().zip(grads).zip(&mut self.moments) {
            for (((p, &gr), m), v) in g
                .values
                .iter_mut()
                .zip(grad)
                .zip(mom.m.iter_mut())
                .zip(mom.v.iter_mut())
            {
                *p *= decay;
                *m = beta1 * *m + (1.0 - beta1) * gr;
                *v = beta2 * *v + (1.0 - beta2) * gr * gr;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> AdamSnapshot {
        AdamSnapshot {
            config: self.config,
            step: self.step,
            first_moment: self.moments.iter().map(|m| (m.name.clone(), m.m.clone())).collect(),
            second_moment: self.moments.iter().map(|m| (m.name.clone(), m.v.clone())).collect(),
        }
    }
}
