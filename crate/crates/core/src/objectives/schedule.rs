use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which optimizer parameter group a learning rate is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroupKind {
    Classifier,
    Adapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr_classifier: f64,
    pub base_lr_adapters: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(base_lr_classifier: f64, base_lr_adapters: f64, total_steps: usize) -> Result<Self> {
        if !(base_lr_classifier > 0.0 && base_lr_adapters > 0.0) {
            return Err(Error::invalid("base learning rates must be positive"));
        }
        if total_steps == 0 {
            return Err(Error::invalid("total_steps must be positive"));
        }
        Ok(Self { base_lr_classifier, base_lr_adapters, total_steps })
    }

    pub fn base(&self, group: ParamGroupKind) -> f64 {
        match group {
            ParamGroupKind::Classifier => self.base_lr_classifier,
            ParamGroupKind::Adapter => self.base_lr_adapters,
        }
    }
}

/// `η(t) = η_base · ½(1 + cos(π t / T))` for `0 ≤ t ≤ T`.
pub fn cosine_lr(schedule: &LrSchedule, step: usize, group: ParamGroupKind) -> Result<f64> {
    if step > schedule.total_steps {
        return Err(Error::invalid(format!("step {step} beyond schedule length {}", schedule.total_steps)));
    }
    let frac = step as f64 / schedule.total_steps as f64;
    Ok(schedule.base(group) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}
