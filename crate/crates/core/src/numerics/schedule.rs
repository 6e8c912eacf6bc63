use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{CcrError, Result};

/// Linear warmup followed by cosine decay to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub warmup_ratio: f64,
    pub total_steps: u64,
}

impl Schedule {
    pub fn new(warmup_ratio: f64, total_steps: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&warmup_ratio) {
            return Err(CcrError::InvalidArgument(format!(
                "warmup ratio {warmup_ratio} outside [0, 1]"
            )));
        }
        if total_steps == 0 {
            return Err(CcrError::InvalidArgument("schedule needs total_steps > 0".into()));
        }
        Ok(Self {
            warmup_ratio,
            total_steps,
        })
    }

    pub fn warmup_steps(&self) -> f64 {
        self.warmup_ratio * self.total_steps as f64
    }
}

pub fn lr_at(schedule: &Schedule, step: u64, base_lr: f64) -> Result<f64> {
    if step > schedule.total_steps {
        return Err(CcrError::InvalidArgument(format!(
            "step {step} beyond schedule length {}",
            schedule.total_steps
        )));
    }
    let s = step as f64;
    let warm = schedule.warmup_steps();
    if s < warm {
        return Ok(base_lr * s / warm);
    }
    let span = schedule.total_steps as f64 - warm;
    if span <= 0.0 {
        return Ok(base_lr);
    }
    let progress = (s - warm) / span;
    Ok((base_lr * 0.5 * (1.0 + (PI * progress).cos())).max(0.0))
}
