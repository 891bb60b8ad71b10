use serde::{Deserialize, Serialize};

use super::NetError;

/// Step decay: `base * factor^(number of milestones <= epoch)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    base: f64,
    milestones: Vec<usize>,
    factor: f64,
}

impl LrSchedule {
    pub fn new(base: f64, milestones: Vec<usize>, factor: f64) -> Result<Self, NetError> {
        if !(base.is_finite() && base > 0.0) {
            return Err(NetError::Config(format!("learning rate {base} must be positive")));
        }
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(NetError::Config(format!("decay factor {factor} outside (0, 1]")));
        }
        if milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NetError::Config("milestones must be strictly increasing".into()));
        }
        Ok(Self {
            base,
            milestones,
            factor,
        })
    }

    pub fn constant(base: f64) -> Result<Self, NetError> {
        Self::new(base, Vec::new(), 1.0)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base * self.factor.powi(passed as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multi_step_decay() {
        let s = LrSchedule::new(1e-3, vec![100, 150], 0.5).unwrap();
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(99), 1e-3);
        assert_eq!(s.lr_at(100), 5e-4);
        assert_eq!(s.lr_at(149), 5e-4);
        assert_eq!(s.lr_at(150), 2.5e-4);
        assert_eq!(s.lr_at(10_000), 2.5e-4);
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(LrSchedule::new(1e-3, vec![150, 100], 0.5).is_err());
        assert!(LrSchedule::new(1e-3, vec![100, 100], 0.5).is_err());
        assert!(LrSchedule::new(1e-3, vec![100], 0.0).is_err());
        assert!(LrSchedule::new(1e-3, vec![100], 1.5).is_err());
        assert!(LrSchedule::new(0.0, vec![], 0.5).is_err());
    }
}
