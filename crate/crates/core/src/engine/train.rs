use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    batch_live_mask, detect_inactive, inject_noise, prune_step, reg_gradient, sparsity_metrics, DempConfig,
    LivenessState, MetricsRow, NoiseMode, PruneReport,
};
use crate::data::{BatchPlan, BatchStream, Dataset};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, GradientSet, Loss, Mode, Network, Target};
use crate::optim::{apply_decoupled_weight_decay, Optimizer};
use crate::tensor::Tensor;

/// Examples per forward pass when evaluating or accumulating full gradients.
const EVAL_CHUNK: usize = 500;

pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub eval: Option<&'a Dataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Steps at which the learning rate is multiplied by `lr_decay`.
    #[serde(default)]
    pub lr_milestones: Vec<u64>,
    #[serde(default = "one")]
    pub lr_decay: f64,
    /// Decoupled weight decay, applied after every optimizer step.
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_metrics_every")]
    pub metrics_every: u64,
    /// Evaluate every this many steps (0: final step only).
    #[serde(default)]
    pub eval_every: u64,
    pub data_seed: u64,
    pub probe_seed: u64,
}

fn one() -> f64 {
    1.0
}

fn default_metrics_every() -> u64 {
    100
}

impl TrainSettings {
    pub fn new(steps: u64, batch_size: usize, lr: f64) -> Self {
        Self {
            steps,
            batch_size,
            lr,
            lr_milestones: Vec::new(),
            lr_decay: 1.0,
            weight_decay: 0.0,
            metrics_every: default_metrics_every(),
            eval_every: 0,
            data_seed: 0,
            probe_seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.metrics_every == 0 {
            return Err(Error::InvalidArgument("steps and metrics cadence must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("training batches need at least 2 examples".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lr {} and lr decay {} must be positive",
                self.lr, self.lr_decay
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!("weight decay {} must be >= 0", self.weight_decay)));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let decays = self.lr_milestones.iter().filter(|&&m| m <= step).count();
        self.lr * self.lr_decay.powi(decays as i32)
    }

    fn eval_due(&self, step: u64) -> bool {
        step + 1 == self.steps || (self.eval_every > 0 && step % self.eval_every == 0)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Network,
    pub optimizer: Optimizer,
    pub liveness: LivenessState,
    pub metrics: Vec<MetricsRow>,
    pub prune_reports: Vec<PruneReport>,
    /// Minibatch loss at every completed step.
    pub losses: Vec<f64>,
    /// Set when training stopped early on a non-finite value.
    pub aborted: Option<String>,
}

impl TrainOutcome {
    pub fn final_eval_accuracy(&self) -> Option<f64> {
        self.metrics.iter().rev().find_map(|r| r.eval_accuracy)
    }

    pub fn final_dead_count(&self) -> usize {
        self.metrics.last().map_or(0, |r| r.dead_counts.iter().sum())
    }
}

#[derive(Debug, Clone)]
pub struct PlainOutcome {
    pub net: Network,
    pub losses: Vec<f64>,
}

fn check_data(net: &Network, data: &TrainData<'_>, batch_size: usize) -> Result<()> {
    for ds in std::iter::once(data.train).chain(data.eval) {
        if ds.example_shape() != net.input_shape() {
            return Err(Error::Shape(format!(
                "dataset {} examples {:?} do not match network input {:?}",
                ds.name,
                ds.example_shape(),
                net.input_shape()
            )));
        }
    }
    if batch_size > data.train.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {batch_size} exceeds {} training examples",
            data.train.len()
        )));
    }
    Ok(())
}

/// The first `ceil(probe_size / batch_size)` batches of a fixed shuffle of the
/// training set.
fn probe_batches(train: &Dataset, probe_size: usize, batch_size: usize, seed: u64) -> Result<Vec<Tensor>> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let batches = probe_size.div_ceil(batch_size);
    order
        .chunks(batch_size)
        .take(batches)
        .map(|idx| Ok(train.batch(idx)?.0))
        .collect()
}

/// Accuracy over `ds` in eval mode.
pub fn evaluate_accuracy(net: &Network, ds: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    let all: Vec<usize> = (0..ds.len()).collect();
    for idx in all.chunks(EVAL_CHUNK) {
        let (x, y) = ds.batch(idx)?;
        let (out, _) = net.forward(&x, Mode::Eval)?;
        correct += argmax_rows(&out).iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Mean cross-entropy gradient over all of `inputs` in eval mode, accumulated
/// in fixed chunks so equal inputs give bitwise-equal results.
pub fn full_gradient(net: &Network, inputs: &Tensor, labels: &[usize]) -> Result<GradientSet> {
    let n = inputs.rows();
    if n == 0 || n != labels.len() {
        return Err(Error::Shape(format!("{n} inputs with {} labels", labels.len())));
    }
    let mut total = GradientSet::zeros_like(net);
    let all: Vec<usize> = (0..n).collect();
    for idx in all.chunks(EVAL_CHUNK) {
        let x = inputs.gather_rows(idx)?;
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let (out, trace) = net.forward(&x, Mode::Eval)?;
        let (_, dloss) = Loss::SoftmaxCrossEntropy.evaluate(&out, &Target::Labels(&y))?;
        let mut g = net.backward(&trace, &dloss)?;
        g.scale(idx.len() as f64 / n as f64);
        total.add_assign(&g)?;
    }
    Ok(total)
}

/// Moves the parameters by the isolated minibatch noise only:
/// `w <- w - lr (g_batch - g_full)`. Returns `g_batch - g_full`.
pub fn pure_noise_step(
    net: &mut Network,
    batch_inputs: &Tensor,
    batch_labels: &[usize],
    full: &Dataset,
    lr: f64,
) -> Result<GradientSet> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
    }
    let mut noise = full_gradient(net, batch_inputs, batch_labels)?;
    let mut g_full = full_gradient(net, full.inputs(), full.labels())?;
    g_full.scale(-1.0);
    noise.add_assign(&g_full)?;
    for (layer, g) in net.layers_mut().iter_mut().zip(&noise.layers) {
        for (p, g) in layer.params_mut().into_iter().zip(g) {
            p.data_mut().iter_mut().zip(g.data()).for_each(|(w, g)| *w -= lr * g);
        }
    }
    Ok(noise)
}

/// Plain minibatch training: forward, backward, optimizer step, decoupled
/// decay. Shares nothing with [`train_demp`] beyond the layer and optimizer
/// primitives, so it can serve as a reference.
pub fn train_plain(
    mut net: Network,
    data: &TrainData<'_>,
    mut optimizer: Optimizer,
    settings: &TrainSettings,
) -> Result<PlainOutcome> {
    settings.validate()?;
    check_data(&net, data, settings.batch_size)?;
    let plan = BatchPlan::new(data.train.len(), settings.batch_size, settings.data_seed)?;
    let mut losses = Vec::with_capacity(settings.steps as usize);
    for t in 0..settings.steps {
        let (x, y) = data.train.batch(&plan.batch_for_step(t))?;
        let (out, trace) = net.forward(&x, Mode::Train)?;
        let (loss, dloss) = Loss::SoftmaxCrossEntropy.evaluate(&out, &Target::Labels(&y))?;
        losses.push(loss);
        let grads = net.backward(&trace, &dloss)?;
        net.update_running_stats(&trace)?;
        let lr = settings.lr_at(t);
        optimizer.step(&mut net, &grads, lr)?;
        apply_decoupled_weight_decay(&mut net, lr, settings.weight_decay)?;
    }
    Ok(PlainOutcome { net, losses })
}

/// Runs the DemP loop for `settings.steps` steps. Per step: minibatch
/// gradient, plus the regularizer gradient at `lambda_t`, optimizer update,
/// decoupled decay, then noise at `sigma2_t`. At every step divisible by the
/// prune period liveness is refreshed on the probe set and, if enabled, dead
/// units are removed. Liveness is also refreshed for every metrics row.
///
/// Noise is drawn from `rng` only; data order and the probe set come from the
/// seeds in `settings`.
pub fn train_demp<R: Rng + ?Sized>(
    mut net: Network,
    data: &TrainData<'_>,
    mut optimizer: Optimizer,
    demp: &DempConfig,
    settings: &TrainSettings,
    rng: &mut R,
) -> Result<TrainOutcome> {
    settings.validate()?;
    demp.validate(settings.steps)?;
    check_data(&net, data, settings.batch_size)?;
    let plan = BatchPlan::new(data.train.len(), settings.batch_size, settings.data_seed)?;
    let mut stream = BatchStream::new(plan);
    let probes = probe_batches(data.train, demp.probe_size, settings.batch_size, settings.probe_seed)?;
    let original = net.clone();
    let original_widths: Vec<usize> = original.neuron_units().iter().map(|u| u.1).collect();
    let mut liveness = LivenessState::new(&net);
    let mut metrics = Vec::new();
    let mut prune_reports = Vec::new();
    let mut losses = Vec::with_capacity(settings.steps as usize);
    let mut aborted = None;

    let row = |net: &Network, liveness: &LivenessState, t: u64, loss: f64, lambda_t: f64, sigma2_t: f64| {
        let s = sparsity_metrics(&original, net, liveness)?;
        let eval_accuracy = match data.eval {
            Some(ds) if settings.eval_due(t) => Some(evaluate_accuracy(net, ds)?),
            _ => None,
        };
        let dead_counts = liveness
            .layers
            .iter()
            .zip(&original_widths)
            .map(|(l, w)| w - l.live.len() + l.inactive_count())
            .collect();
        Ok::<_, Error>(MetricsRow {
            step: t,
            train_loss: loss,
            eval_accuracy,
            neuron_sparsity: s.neuron_sparsity,
            weight_sparsity: s.weight_sparsity,
            flops_estimate: s.flops_estimate,
            lambda_t,
            sigma2_t,
            dead_counts,
        })
    };

    for t in 0..settings.steps {
        let lambda_t = demp.lambda.value_at(t)?;
        let sigma2_t = demp.sigma2.value_at(t)?;
        let (x, y) = data.train.batch(stream.batch_for_step(t))?;
        let (out, trace) = net.forward(&x, Mode::Train)?;
        let (loss, dloss) = Loss::SoftmaxCrossEntropy.evaluate(&out, &Target::Labels(&y))?;
        losses.push(loss);
        if !loss.is_finite() {
            metrics.push(row(&net, &liveness, t, loss, lambda_t, sigma2_t)?);
            aborted = Some(format!("non-finite training loss {loss} at step {t}"));
            break;
        }
        let mut grads = net.backward(&trace, &dloss)?;
        net.update_running_stats(&trace)?;
        if lambda_t > 0.0 {
            grads.add_assign(&reg_gradient(&net, lambda_t, demp.regularizer)?)?;
        }
        let lr = settings.lr_at(t);
        match optimizer.step(&mut net, &grads, lr) {
            Err(Error::NonFinite(msg)) => {
                metrics.push(row(&net, &liveness, t, loss, lambda_t, sigma2_t)?);
                aborted = Some(format!("step {t}: {msg}"));
                break;
            }
            other => other?,
        }
        apply_decoupled_weight_decay(&mut net, lr, settings.weight_decay)?;
        if sigma2_t > 0.0 && demp.noise_mode != NoiseMode::Off {
            let live = match demp.noise_mode {
                NoiseMode::Asymmetric => batch_live_mask(&net, &trace, demp.criterion, demp.death_threshold)?,
                _ => Vec::new(),
            };
            inject_noise(&mut net, &live, sigma2_t, demp.noise_mode, rng)?;
        }

        let prune_due = t % demp.prune_period == 0;
        let metrics_due = prune_due || t % settings.metrics_every == 0 || t + 1 == settings.steps;
        if metrics_due {
            detect_inactive(&net, &mut liveness, &probes, demp.criterion, demp.death_threshold)?;
            liveness.record(t);
        }
        if prune_due && demp.dynamic_pruning {
            prune_reports.push(prune_step(&mut net, &mut liveness, &mut optimizer, t)?);
        }
        if metrics_due {
            metrics.push(row(&net, &liveness, t, loss, lambda_t, sigma2_t)?);
        }
    }
    Ok(TrainOutcome { net, optimizer, liveness, metrics, prune_reports, losses, aborted })
}
