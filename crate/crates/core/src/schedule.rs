//! Scalar schedules for the regularization strength and the noise variance.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WARMUP_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Linear ramp to `peak`, then cosine decay to zero at `total_steps`.
    OneCycle,
    Constant,
    /// Linear ramp to `peak`, then hold.
    WarmupOnly,
    /// Cosine decay from `peak` at step 0 to zero at `total_steps`.
    DecayOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub peak: f64,
    pub total_steps: u64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
}

fn default_warmup() -> f64 {
    DEFAULT_WARMUP_FRACTION
}

impl ScheduleSpec {
    pub fn one_cycle(peak: f64, total_steps: u64, warmup_fraction: f64) -> Self {
        Self { kind: ScheduleKind::OneCycle, peak, total_steps, warmup_fraction }
    }

    pub fn constant(peak: f64, total_steps: u64) -> Self {
        Self { kind: ScheduleKind::Constant, peak, total_steps, warmup_fraction: DEFAULT_WARMUP_FRACTION }
    }

    pub fn zero(total_steps: u64) -> Self {
        Self::constant(0.0, total_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak >= 0.0 && self.peak.is_finite()) {
            return Err(Error::InvalidArgument(format!("schedule peak {} must be >= 0", self.peak)));
        }
        if matches!(self.kind, ScheduleKind::OneCycle | ScheduleKind::WarmupOnly) {
            if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "warmup fraction {} outside (0, 1)",
                    self.warmup_fraction
                )));
            }
            if self.total_steps < 2 {
                return Err(Error::InvalidArgument(format!(
                    "{:?} schedule needs at least 2 steps",
                    self.kind
                )));
            }
        }
        if self.kind == ScheduleKind::DecayOnly && self.total_steps == 0 {
            return Err(Error::InvalidArgument("decay schedule needs at least 1 step".into()));
        }
        Ok(())
    }

    /// Step at which a warm-up reaches the peak: `ceil(rho * T)`, kept below `T`
    /// so the decay phase is never empty.
    pub fn warmup_steps(&self) -> u64 {
        let w = (self.warmup_fraction * self.total_steps as f64).ceil() as u64;
        w.clamp(1, self.total_steps.saturating_sub(1).max(1))
    }

    pub fn value_at(&self, t: u64) -> Result<f64> {
        self.validate()?;
        let total = self.total_steps;
        if t > total {
            return Err(Error::InvalidArgument(format!("step {t} outside [0, {total}]")));
        }
        let peak = self.peak;
        let cosine = |x: f64| 0.5 * peak * (1.0 + (PI * x).cos());
        Ok(match self.kind {
            ScheduleKind::Constant => peak,
            ScheduleKind::DecayOnly => cosine(t as f64 / total as f64),
            ScheduleKind::WarmupOnly | ScheduleKind::OneCycle => {
                let w = self.warmup_steps();
                if t <= w {
                    peak * (t as f64 / w as f64)
                } else if self.kind == ScheduleKind::WarmupOnly {
                    peak
                } else {
                    cosine((t - w) as f64 / (total - w) as f64)
                }
            }
        })
    }

    /// Values at every step `0..=T`.
    pub fn values(&self) -> Result<Vec<f64>> {
        (0..=self.total_steps).map(|t| self.value_at(t)).collect()
    }
}
