//! First-order optimizers with per-parameter state that can be shrunk
//! alongside the network when units are pruned.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{apply_removal, GradientSet, Network, RemovalOp};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Sgdm {
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_momentum() -> f64 {
    DEFAULT_MOMENTUM
}
fn default_beta1() -> f64 {
    DEFAULT_BETA1
}
fn default_beta2() -> f64 {
    DEFAULT_BETA2
}
fn default_adam_eps() -> f64 {
    DEFAULT_ADAM_EPS
}

impl OptimizerKind {
    pub fn sgdm() -> Self {
        OptimizerKind::Sgdm { momentum: DEFAULT_MOMENTUM }
    }

    pub fn adam(eps: f64) -> Self {
        OptimizerKind::Adam { beta1: DEFAULT_BETA1, beta2: DEFAULT_BETA2, eps }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match *self {
            OptimizerKind::Sgd => Ok(()),
            OptimizerKind::Sgdm { momentum } if !(0.0..1.0).contains(&momentum) => {
                bad(format!("momentum {momentum} outside [0, 1)"))
            }
            OptimizerKind::Adam { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0 && eps.is_finite()) =>
            {
                bad(format!("adam beta1 {beta1}, beta2 {beta2}, eps {eps}"))
            }
            _ => Ok(()),
        }
    }
}

/// Optimizer state. Buffers are laid out like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    /// Momentum buffer (SGDM) or first moment `m` (Adam).
    first: Option<GradientSet>,
    /// Second moment `v` (Adam).
    second: Option<GradientSet>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, net: &Network) -> Result<Self> {
        kind.validate()?;
        let (first, second) = match kind {
            OptimizerKind::Sgd => (None, None),
            OptimizerKind::Sgdm { .. } => (Some(GradientSet::zeros_like(net)), None),
            OptimizerKind::Adam { .. } => {
                (Some(GradientSet::zeros_like(net)), Some(GradientSet::zeros_like(net)))
            }
        };
        Ok(Self { kind, first, second, step_count: 0 })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> Option<&GradientSet> {
        self.first.as_ref()
    }

    pub fn second_moment(&self) -> Option<&GradientSet> {
        self.second.as_ref()
    }

    /// Applies one update. Nothing is modified if the step is refused.
    pub fn step(&mut self, net: &mut Network, grads: &GradientSet, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
        }
        if !grads.matches(net) {
            return Err(Error::Shape("gradient set does not match network parameters".into()));
        }
        grads.ensure_finite()?;
        for buf in self.first.iter().chain(self.second.iter()) {
            if !buf.matches(net) {
                return Err(Error::Precondition(
                    "optimizer buffers are stale; shrink them after pruning".into(),
                ));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let kind = self.kind;
        for (li, layer) in net.layers_mut().iter_mut().enumerate() {
            for (pi, param) in layer.params_mut().into_iter().enumerate() {
                let g = grads.layers[li][pi].data();
                let w = param.data_mut();
                match kind {
                    OptimizerKind::Sgd => {
                        for (w, g) in w.iter_mut().zip(g) {
                            *w -= lr * g;
                        }
                    }
                    OptimizerKind::Sgdm { momentum } => {
                        let buf = self.first.as_mut().unwrap().layers[li][pi].data_mut();
                        for ((w, g), b) in w.iter_mut().zip(g).zip(buf.iter_mut()) {
                            *b = momentum * *b + g;
                            *w -= lr * *b;
                        }
                    }
                    OptimizerKind::Adam { beta1, beta2, eps } => {
                        let m = self.first.as_mut().unwrap().layers[li][pi].data_mut();
                        let v = self.second.as_mut().unwrap().layers[li][pi].data_mut();
                        let c1 = 1.0 - beta1.powi(t);
                        let c2 = 1.0 - beta2.powi(t);
                        for (((w, g), m), v) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                            *m = beta1 * *m + (1.0 - beta1) * g;
                            *v = beta2 * *v + (1.0 - beta2) * g * g;
                            let m_hat = *m / c1;
                            let v_hat = *v / c2;
                            *w -= lr * m_hat / (v_hat.sqrt() + eps);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Shrinks the buffers with the plan returned by a unit removal.
    pub fn apply_removal(&mut self, ops: &[RemovalOp]) -> Result<()> {
        for buf in self.first.iter_mut().chain(self.second.iter_mut()) {
            apply_removal(ops, buf)?;
        }
        Ok(())
    }
}

/// `w <- w - lr * wd * w` on every parameter, outside the optimizer statistics.
pub fn apply_decoupled_weight_decay(net: &mut Network, lr: f64, wd: f64) -> Result<()> {
    if !(wd >= 0.0 && wd.is_finite()) {
        return Err(Error::InvalidArgument(format!("weight decay {wd} must be >= 0")));
    }
    if wd == 0.0 {
        return Ok(());
    }
    let factor = lr * wd;
    for layer in net.layers_mut() {
        for p in layer.params_mut() {
            p.data_mut().iter_mut().for_each(|w| *w -= factor * *w);
        }
    }
    Ok(())
}
