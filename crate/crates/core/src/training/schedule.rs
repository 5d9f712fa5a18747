use serde::{Deserialize, Serialize};

use crate::error::{config_err, contract_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Learning rate reached at the end of the cosine decay.
    pub floor: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { warmup_epochs: 10, epochs: 200, steps_per_epoch: 1, floor: 0.0 }
    }
}

impl ScheduleConfig {
    pub fn warmup_steps(&self) -> usize {
        self.warmup_epochs * self.steps_per_epoch
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn validate(&self, peak: f64) -> Result<()> {
        if self.steps_per_epoch == 0 {
            return Err(config_err!("steps per epoch must be positive"));
        }
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return Err(config_err!("warmup ({} epochs) must be shorter than training ({} epochs)", self.warmup_epochs, self.epochs));
        }
        if !(self.floor >= 0.0 && self.floor <= peak) {
            return Err(config_err!("floor learning rate {} must lie in [0, peak={}]", self.floor, peak));
        }
        Ok(())
    }
}

/// Linear ramp from 0 to `peak`, then cosine decay reaching the floor at
/// the last step.
pub fn cosine_warmup_lr(step: usize, s: &ScheduleConfig, peak: f64) -> Result<f64> {
    let total = s.total_steps();
    if step >= total {
        return Err(contract_err!("step {} outside schedule of {} steps", step, total));
    }
    let w = s.warmup_steps();
    if step < w {
        return Ok(peak * step as f64 / w as f64);
    }
    let progress = (step - w) as f64 / (total - 1 - w).max(1) as f64;
    Ok(s.floor + (peak - s.floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s() -> ScheduleConfig {
        ScheduleConfig { warmup_epochs: 2, epochs: 13, steps_per_epoch: 5, floor: 0.0 }
    }

    #[test]
    fn endpoints() {
        assert_eq!(cosine_warmup_lr(0, &s(), 1.0).unwrap(), 0.0);
        assert_eq!(cosine_warmup_lr(10, &s(), 1.0).unwrap(), 1.0);
        // decay runs over steps 10..=64, midpoint is step 37
        assert!((cosine_warmup_lr(37, &s(), 1.0).unwrap() - 0.5).abs() < 1e-9);
        assert!(cosine_warmup_lr(64, &s(), 1.0).unwrap().abs() < 1e-9);
        assert!(cosine_warmup_lr(65, &s(), 1.0).is_err());
    }

    #[test]
    fn validation() {
        assert!(ScheduleConfig { warmup_epochs: 13, ..s() }.validate(1.0).is_err());
        assert!(ScheduleConfig { floor: 2.0, ..s() }.validate(1.0).is_err());
        assert!(s().validate(1.0).is_ok());
    }
}
