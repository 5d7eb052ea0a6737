use std::collections::BTreeSet;

use serde::Serialize;

use super::DeathCriterion;
use crate::error::{Error, Result};
use crate::nn::{ForwardTrace, Mode, Network, UnitProbe};
use crate::tensor::Tensor;

/// Liveness of the units of one prunable layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerLiveness {
    /// Index of the layer in the network.
    pub layer: usize,
    /// `true` = live. Same length as the current layer width.
    pub live: Vec<bool>,
    /// Probe statistic per unit: max |a| (or max pre-activation for
    /// [`DeathCriterion::NegativePreact`]).
    pub stat: Vec<f64>,
    /// Id of each current unit in the step-0 network.
    pub original_ids: Vec<usize>,
}

impl LayerLiveness {
    pub fn inactive(&self) -> BTreeSet<usize> {
        (0..self.live.len()).filter(|&i| !self.live[i]).collect()
    }

    pub fn inactive_count(&self) -> usize {
        self.live.iter().filter(|l| !**l).count()
    }
}

/// Inactive units, by original id, observed at one liveness refresh.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LivenessCheckpoint {
    pub step: u64,
    /// One set per prunable layer.
    pub inactive: Vec<BTreeSet<usize>>,
}

impl LivenessCheckpoint {
    /// All inactive units as `(prunable layer position, original id)`.
    pub fn flattened(&self) -> BTreeSet<(usize, usize)> {
        self.inactive
            .iter()
            .enumerate()
            .flat_map(|(l, s)| s.iter().map(move |&u| (l, u)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LivenessState {
    pub layers: Vec<LayerLiveness>,
    pub history: Vec<LivenessCheckpoint>,
}

impl LivenessState {
    /// Everything live, one entry per prunable layer.
    pub fn new(net: &Network) -> Self {
        let layers = net
            .neuron_units()
            .into_iter()
            .map(|(layer, width)| LayerLiveness {
                layer,
                live: vec![true; width],
                stat: vec![f64::INFINITY; width],
                original_ids: (0..width).collect(),
            })
            .collect();
        Self { layers, history: Vec::new() }
    }

    pub fn masks(&self) -> Vec<Vec<bool>> {
        self.layers.iter().map(|l| l.live.clone()).collect()
    }

    /// [`Self::masks`] plus an all-live entry for the output layer, the shape
    /// expected by [`super::inject_noise`].
    pub fn noise_mask(&self, net: &Network) -> Vec<Vec<bool>> {
        let mut m = self.masks();
        if let Some(&out) = net.parametric_layers().last() {
            m.push(vec![true; net.units(out)]);
        }
        m
    }

    pub fn inactive_counts(&self) -> Vec<usize> {
        self.layers.iter().map(LayerLiveness::inactive_count).collect()
    }

    pub fn record(&mut self, step: u64) {
        let inactive = self
            .layers
            .iter()
            .map(|l| l.inactive().into_iter().map(|i| l.original_ids[i]).collect())
            .collect();
        self.history.push(LivenessCheckpoint { step, inactive });
    }

    /// Drops `removed` units (current indices) of prunable position `pos`.
    pub(crate) fn remove(&mut self, pos: usize, removed: &BTreeSet<usize>) {
        let l = &mut self.layers[pos];
        let keep: Vec<usize> = (0..l.live.len()).filter(|i| !removed.contains(i)).collect();
        l.live = keep.iter().map(|&i| l.live[i]).collect();
        l.stat = keep.iter().map(|&i| l.stat[i]).collect();
        l.original_ids = keep.iter().map(|&i| l.original_ids[i]).collect();
    }
}

fn unit_maxima(t: &Tensor, units: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = t.rows();
    let per_unit = t.row_len() / units.max(1);
    let mut out = vec![f64::NEG_INFINITY; units];
    for ex in t.data().chunks_exact(t.row_len()).take(n) {
        for (u, m) in out.iter_mut().enumerate() {
            for &v in &ex[u * per_unit..(u + 1) * per_unit] {
                *m = m.max(f(v));
            }
        }
    }
    out
}

fn probe_stats(trace: &ForwardTrace, probe: UnitProbe, units: usize, criterion: DeathCriterion) -> Vec<f64> {
    match criterion {
        DeathCriterion::NegativePreact => unit_maxima(&trace.outputs[probe.pre_activation], units, |v| v),
        _ => unit_maxima(&trace.outputs[probe.post_activation], units, f64::abs),
    }
}

fn is_inactive(stat: f64, criterion: DeathCriterion, eps: f64) -> bool {
    match criterion {
        DeathCriterion::ZeroOutput => stat == 0.0,
        DeathCriterion::EpsInactive => stat < eps,
        DeathCriterion::NegativePreact => stat < 0.0,
    }
}

fn probes(net: &Network, liveness: &LivenessState) -> Result<Vec<UnitProbe>> {
    liveness
        .layers
        .iter()
        .map(|l| {
            if net.units(l.layer) != l.live.len() {
                return Err(Error::Precondition(format!(
                    "liveness mask for layer {} has {} entries, layer has {} units",
                    l.layer,
                    l.live.len(),
                    net.units(l.layer)
                )));
            }
            net.unit_probe(l.layer)
                .ok_or_else(|| Error::Precondition(format!("layer {} is not prunable", l.layer)))
        })
        .collect()
}

/// Re-evaluates every unit over the probe batches (eval mode) and updates the
/// masks and statistics. Returns the inactive units of each prunable layer
/// (current indices).
pub fn detect_inactive(
    net: &Network,
    liveness: &mut LivenessState,
    probe_batches: &[Tensor],
    criterion: DeathCriterion,
    eps: f64,
) -> Result<Vec<BTreeSet<usize>>> {
    if probe_batches.iter().all(|b| b.rows() == 0) {
        return Err(Error::Precondition("probe set is empty".into()));
    }
    let probes = probes(net, liveness)?;
    let mut stats: Vec<Vec<f64>> = liveness
        .layers
        .iter()
        .map(|l| vec![f64::NEG_INFINITY; l.live.len()])
        .collect();
    for batch in probe_batches.iter().filter(|b| b.rows() > 0) {
        let (_, trace) = net.forward(batch, Mode::Eval)?;
        for ((s, p), l) in stats.iter_mut().zip(&probes).zip(&liveness.layers) {
            let batch_stats = probe_stats(&trace, *p, l.live.len(), criterion);
            s.iter_mut().zip(batch_stats).for_each(|(a, b)| *a = a.max(b));
        }
    }
    let mut inactive = Vec::with_capacity(stats.len());
    for (l, s) in liveness.layers.iter_mut().zip(stats) {
        l.live = s.iter().map(|&v| !is_inactive(v, criterion, eps)).collect();
        l.stat = s;
        inactive.push(l.inactive());
    }
    Ok(inactive)
}

/// Per-unit liveness on the batch behind `trace` alone, for every parametric
/// layer. Output units are always live.
pub fn batch_live_mask(
    net: &Network,
    trace: &ForwardTrace,
    criterion: DeathCriterion,
    eps: f64,
) -> Result<Vec<Vec<bool>>> {
    let mut masks = net
        .neuron_units()
        .into_iter()
        .map(|(layer, width)| {
            let probe = net
                .unit_probe(layer)
                .ok_or_else(|| Error::Precondition(format!("layer {layer} is not prunable")))?;
            Ok(probe_stats(trace, probe, width, criterion)
                .into_iter()
                .map(|s| !is_inactive(s, criterion, eps))
                .collect())
        })
        .collect::<Result<Vec<Vec<bool>>>>()?;
    if let Some(&out) = net.parametric_layers().last() {
        masks.push(vec![true; net.units(out)]);
    }
    Ok(masks)
}
