//! The DemP training loop and its building blocks: liveness detection,
//! scale-parameter regularization, asymmetric noise and structural pruning.

mod liveness;
mod metrics;
mod perturb;
mod prune;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::ScheduleSpec;

pub use liveness::{batch_live_mask, detect_inactive, LayerLiveness, LivenessCheckpoint, LivenessState};
pub use metrics::{
    csv_header, overlap_ratio, param_count_for_widths, sparsity_metrics, MetricsRow, SparsityMetrics,
    METRICS_COLUMNS,
};
pub use perturb::{inject_noise, reg_gradient, LiveMask};
pub use prune::{prune_step, PruneReport};
pub use train::{
    evaluate_accuracy, full_gradient, pure_noise_step, train_demp, train_plain, PlainOutcome, TrainData,
    TrainOutcome, TrainSettings,
};

pub const DEFAULT_PRUNE_PERIOD: u64 = 5000;
pub const DEFAULT_DEATH_THRESHOLD: f64 = 0.01;
pub const DEFAULT_PROBE_SIZE: usize = 512;
pub const DEFAULT_SIGMA2_PEAK: f64 = 5e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeathCriterion {
    /// Every post-activation is exactly zero over the probe set.
    ZeroOutput,
    /// `max |a| < eps` over the probe set.
    EpsInactive,
    /// Every pre-activation is negative over the probe set.
    NegativePreact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    /// `lambda * |gamma|_1` on batch-norm scales.
    LassoScale,
    /// `lambda * |gamma|_2^2` on batch-norm scales.
    L2Scale,
    /// Lasso on batch-norm scales and all dense/conv weights.
    LassoAll,
    /// Squared L2 on batch-norm scales and all dense/conv weights.
    L2All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Only parameters of live units are perturbed.
    Asymmetric,
    Symmetric,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DempConfig {
    pub lambda: ScheduleSpec,
    pub sigma2: ScheduleSpec,
    pub prune_period: u64,
    pub death_threshold: f64,
    pub probe_size: usize,
    pub criterion: DeathCriterion,
    pub regularizer: Regularizer,
    pub noise_mode: NoiseMode,
    pub dynamic_pruning: bool,
}

impl DempConfig {
    /// Everything switched off: zero schedules, no noise, no pruning.
    pub fn disabled(steps: u64) -> Self {
        Self {
            lambda: ScheduleSpec::zero(steps),
            sigma2: ScheduleSpec::zero(steps),
            prune_period: DEFAULT_PRUNE_PERIOD,
            death_threshold: DEFAULT_DEATH_THRESHOLD,
            probe_size: DEFAULT_PROBE_SIZE,
            criterion: DeathCriterion::ZeroOutput,
            regularizer: Regularizer::LassoScale,
            noise_mode: NoiseMode::Off,
            dynamic_pruning: false,
        }
    }

    pub fn validate(&self, steps: u64) -> Result<()> {
        if self.prune_period == 0 {
            return Err(Error::InvalidArgument("prune period must be >= 1".into()));
        }
        if !(self.death_threshold > 0.0 && self.death_threshold.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "death threshold {} must be positive",
                self.death_threshold
            )));
        }
        if self.probe_size == 0 {
            return Err(Error::InvalidArgument("probe size must be >= 1".into()));
        }
        for (name, s) in [("lambda", &self.lambda), ("sigma2", &self.sigma2)] {
            s.validate()?;
            if s.total_steps != steps {
                return Err(Error::InvalidArgument(format!(
                    "{name} schedule spans {} steps, training runs {steps}",
                    s.total_steps
                )));
            }
        }
        Ok(())
    }
}
