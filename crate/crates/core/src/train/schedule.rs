//! Learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Inverse-square-root schedule: `peak` for the first `warmup` steps, then
/// `peak * sqrt(warmup / step)`, never below `floor`.
pub fn lr_t5(step: u64, warmup: u64, peak: f64, floor: f64) -> f64 {
    let step = step.max(1);
    let k = warmup.max(1) as f64;
    let lr = peak * (k / (step as f64).max(k)).sqrt();
    lr.max(floor)
}

/// Base rate scaled for a batch `k` times larger than the one it was tuned on.
pub fn lr_scaled_constant(base: f64, k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::Config(format!("batch ratio must be positive, got {k}")));
    }
    Ok(base * k.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    InverseSqrt { peak: f64, floor: f64, warmup: u64 },
    Constant { lr: f64 },
}

impl LrSchedule {
    /// Rate at the 1-based step of a phase.
    pub fn at(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::InverseSqrt { peak, floor, warmup } => lr_t5(step, warmup, peak, floor),
            LrSchedule::Constant { lr } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::InverseSqrt { peak, floor, .. } => peak > 0.0 && floor >= 0.0 && floor <= peak,
            LrSchedule::Constant { lr } => lr > 0.0,
        };
        if ok && self.at(1).is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid learning-rate schedule {self:?}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn continuous_at_warmup() {
        let k = 500;
        let before = lr_t5(k, k, 0.01, 0.0);
        let after = lr_t5(k + 1, k, 0.01, 0.0);
        assert_eq!(before, 0.01);
        assert!((before - after).abs() < 1e-5);
    }

    #[test]
    fn decays_as_inverse_sqrt() {
        assert!((lr_t5(4_000, 1_000, 1.0, 0.0) - 0.5).abs() < 1e-15);
        assert_eq!(lr_t5(0, 10, 0.3, 0.0), 0.3);
    }
}
