use serde::Serialize;

use super::LivenessState;
use crate::error::Result;
use crate::nn::Network;
use crate::optim::Optimizer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PruneReport {
    pub step: u64,
    /// Units removed from each prunable layer.
    pub removed: Vec<usize>,
    /// Inactive units left in place because removing them would empty the layer.
    pub kept_by_floor: Vec<usize>,
    pub params_before: usize,
    pub params_after: usize,
}

impl PruneReport {
    pub fn total_removed(&self) -> usize {
        self.removed.iter().sum()
    }
}

/// Removes every unit currently flagged inactive in `liveness`, shrinking the
/// optimizer buffers in lockstep. A layer always keeps at least one unit: if
/// all of its units are inactive, the one with the largest probe statistic
/// stays (flagged).
pub fn prune_step(
    net: &mut Network,
    liveness: &mut LivenessState,
    optimizer: &mut Optimizer,
    step: u64,
) -> Result<PruneReport> {
    let params_before = net.param_count();
    let positions = liveness.layers.len();
    let mut removed = vec![0; positions];
    let mut kept_by_floor = vec![0; positions];
    for pos in (0..positions).rev() {
        let layer = &liveness.layers[pos];
        let mut doomed = layer.inactive();
        if doomed.len() == layer.live.len() && !doomed.is_empty() {
            let survivor = (0..layer.stat.len())
                .fold(0, |best, i| if layer.stat[i] > layer.stat[best] { i } else { best });
            doomed.remove(&survivor);
            kept_by_floor[pos] = 1;
        }
        if doomed.is_empty() {
            continue;
        }
        let ops = net.remove_units_in_place(layer.layer, &doomed)?;
        optimizer.apply_removal(&ops)?;
        liveness.remove(pos, &doomed);
        removed[pos] = doomed.len();
    }
    Ok(PruneReport { step, removed, kept_by_floor, params_before, params_after: net.param_count() })
}
