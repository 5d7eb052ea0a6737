use std::collections::BTreeSet;
use std::fmt::Write;

use serde::Serialize;

use super::LivenessState;
use crate::error::{Error, Result};
use crate::nn::{Layer, Network};

/// Fixed leading columns of the metrics CSV; `dead_count_layer_<i>` columns follow.
pub const METRICS_COLUMNS: [&str; 8] = [
    "step",
    "train_loss",
    "eval_accuracy",
    "neuron_sparsity",
    "weight_sparsity",
    "flops_estimate",
    "lambda_t",
    "sigma2_t",
];

pub fn csv_header(prunable_layers: usize) -> String {
    let mut h = METRICS_COLUMNS.join(",");
    for i in 0..prunable_layers {
        write!(h, ",dead_count_layer_{i}").unwrap();
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: u64,
    pub train_loss: f64,
    pub eval_accuracy: Option<f64>,
    pub neuron_sparsity: f64,
    pub weight_sparsity: f64,
    pub flops_estimate: u64,
    pub lambda_t: f64,
    pub sigma2_t: f64,
    /// Removed plus currently inactive units, per prunable layer.
    pub dead_counts: Vec<usize>,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},{},", self.step, self.train_loss);
        if let Some(a) = self.eval_accuracy {
            write!(s, "{a}").unwrap();
        }
        write!(
            s,
            ",{},{},{},{},{}",
            self.neuron_sparsity, self.weight_sparsity, self.flops_estimate, self.lambda_t, self.sigma2_t
        )
        .unwrap();
        for d in &self.dead_counts {
            write!(s, ",{d}").unwrap();
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SparsityMetrics {
    pub neuron_sparsity: f64,
    pub weight_sparsity: f64,
    /// Multiply-accumulates of one forward pass of the current architecture.
    pub flops_estimate: u64,
}

/// Parameter count of `net` with each prunable layer resized to `widths`
/// (one entry per prunable layer, in order).
pub fn param_count_for_widths(net: &Network, widths: &[usize]) -> Result<usize> {
    let prunable = net.prunable_layers();
    if widths.len() != prunable.len() {
        return Err(Error::Shape(format!(
            "{} widths for {} prunable layers",
            widths.len(),
            prunable.len()
        )));
    }
    let width_of = |layer: usize, default: usize| {
        prunable.iter().position(|&p| p == layer).map_or(default, |pos| widths[pos])
    };
    let mut shape = net.input_shape().to_vec();
    let mut total = 0;
    for (i, layer) in net.layers().iter().enumerate() {
        match layer {
            Layer::Dense(d) => {
                let inputs: usize = shape.iter().product();
                let out = width_of(i, d.outputs());
                total += inputs * out + out;
                shape = vec![out];
            }
            Layer::Conv2d(c) => {
                let (kh, kw) = c.kernel();
                let out = width_of(i, c.out_channels());
                total += out * shape[0] * kh * kw + out;
                let (oh, ow) = c
                    .output_hw(shape[1], shape[2])
                    .ok_or_else(|| Error::Shape(format!("layer {i}: kernel does not fit")))?;
                shape = vec![out, oh, ow];
            }
            Layer::BatchNorm(_) => total += 2 * shape[0],
            Layer::Activation(_) => {}
        }
    }
    Ok(total)
}

/// Sparsity of `current` relative to the step-0 network `original`. Units
/// flagged inactive in `liveness` but not yet removed count as removed.
pub fn sparsity_metrics(original: &Network, current: &Network, liveness: &LivenessState) -> Result<SparsityMetrics> {
    let original_units: usize = original.neuron_units().iter().map(|u| u.1).sum();
    let effective: Vec<usize> = current
        .neuron_units()
        .iter()
        .zip(&liveness.layers)
        .map(|((_, w), l)| w - l.inactive_count())
        .collect();
    let original_params = original.param_count();
    let effective_params = param_count_for_widths(current, &effective)?;
    let ratio = |removed: usize, total: usize| if total == 0 { 0.0 } else { removed as f64 / total as f64 };
    Ok(SparsityMetrics {
        neuron_sparsity: ratio(original_units - effective.iter().sum::<usize>(), original_units),
        weight_sparsity: ratio(original_params.saturating_sub(effective_params), original_params),
        flops_estimate: current.mac_count(),
    })
}

/// `|X ∩ Y| / min(|X|, |Y|)`.
pub fn overlap_ratio<T: Ord>(x: &BTreeSet<T>, y: &BTreeSet<T>) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidArgument("overlap ratio of an empty set".into()));
    }
    Ok(x.intersection(y).count() as f64 / x.len().min(y.len()) as f64)
}
