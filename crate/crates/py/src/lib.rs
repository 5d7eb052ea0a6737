//! Python bindings: random-walk simulators, schedules, overlap ratio and a
//! small training entry point on synthetic blobs.

use std::collections::BTreeSet;

use demp_core::data::synth_blobs;
use demp_core::engine::{train_demp, DempConfig, NoiseMode, TrainData, TrainSettings};
use demp_core::nn::{mlp, Activation};
use demp_core::optim::{Optimizer, OptimizerKind};
use demp_core::schedule::{ScheduleKind, ScheduleSpec};
use demp_core::theory::{self, GeomWalkConfig, NoiseLaw, WalkConfig};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn noise_law(law: &str, c: f64) -> PyResult<NoiseLaw> {
    match law {
        "uniform" => Ok(NoiseLaw::Uniform { c }),
        "rademacher" => Ok(NoiseLaw::Rademacher { c }),
        other => Err(PyValueError::new_err(format!("unknown noise law '{other}' (uniform, rademacher)"))),
    }
}

/// erf(w0 / sqrt(2 eta t)).
#[pyfunction]
fn survival_closed_form(w0: f64, eta: f64, t: f64) -> PyResult<f64> {
    theory::survival_closed_form(w0, eta, t).map_err(value_err)
}

/// Monte-Carlo survival of the absorbed walk; returns (survival, stderr).
#[pyfunction]
#[pyo3(signature = (w0, eta, t, n_sub = 10_000, trajectories = 100_000, seed = 0))]
fn simulate_absorbing(py: Python<'_>, w0: f64, eta: f64, t: f64, n_sub: u64, trajectories: u64, seed: u64) -> PyResult<(f64, f64)> {
    let cfg = WalkConfig { w0, eta, t, n_sub, trajectories, seed };
    let est = py.detach(|| theory::simulate_absorbing(&cfg)).map_err(value_err)?;
    Ok((est.survival, est.stderr))
}

/// Per-trajectory Lyapunov exponents of `w <- w - eta (h + zeta) w`;
/// returns (mean, per_trajectory).
#[pyfunction]
#[pyo3(signature = (h, eta, c, law = "uniform", steps = 100_000, trajectories = 100, seed = 0))]
fn lyapunov(
    py: Python<'_>,
    h: f64,
    eta: f64,
    c: f64,
    law: &str,
    steps: u64,
    trajectories: u64,
    seed: u64,
) -> PyResult<(f64, Vec<f64>)> {
    let cfg = GeomWalkConfig { h, eta, noise: noise_law(law, c)?, steps, trajectories, seed };
    let est = py.detach(|| theory::simulate_geometric(&cfg)).map_err(value_err)?;
    Ok((est.lyapunov, est.per_trajectory))
}

/// Monte-Carlo mean of log(1 - eta (h + zeta)); returns (mu, stderr).
#[pyfunction]
#[pyo3(signature = (h, eta, c, law = "uniform", samples = 1_000_000, seed = 0))]
fn mu_estimate(py: Python<'_>, h: f64, eta: f64, c: f64, law: &str, samples: u64, seed: u64) -> PyResult<(f64, f64)> {
    let cfg = GeomWalkConfig { h, eta, noise: noise_law(law, c)?, steps: 1, trajectories: 1, seed };
    let est = py.detach(|| theory::mu_estimate(&cfg, samples)).map_err(value_err)?;
    Ok((est.mu, est.stderr))
}

/// The negative-curvature bound at `eta`, as a dict.
#[pyfunction]
fn lemma2_bound<'py>(py: Python<'py>, h: f64, sigma2: f64, eta: f64) -> PyResult<Bound<'py, PyDict>> {
    let b = theory::lemma2_bound(h, sigma2, eta).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("p_eta", b.p_eta)?;
    d.set_item("min_p", b.min_p)?;
    d.set_item("argmin", b.argmin)?;
    d.set_item("negative_interval", b.negative_interval)?;
    d.set_item("admissible_midpoint", b.admissible_midpoint(NoiseLaw::uniform_with_variance(sigma2).bound()))?;
    Ok(d)
}

/// Schedule values at steps 0..=steps.
#[pyfunction]
#[pyo3(signature = (kind, peak, steps, warmup_fraction = 0.1))]
fn schedule_values(kind: &str, peak: f64, steps: u64, warmup_fraction: f64) -> PyResult<Vec<f64>> {
    let kind = match kind {
        "one_cycle" => ScheduleKind::OneCycle,
        "constant" => ScheduleKind::Constant,
        "warmup_only" => ScheduleKind::WarmupOnly,
        "decay_only" => ScheduleKind::DecayOnly,
        other => return Err(PyValueError::new_err(format!("unknown schedule kind '{other}'"))),
    };
    ScheduleSpec { kind, peak, total_steps: steps, warmup_fraction }.values().map_err(value_err)
}

/// |X ∩ Y| / min(|X|, |Y|).
#[pyfunction]
fn overlap_ratio(x: Vec<u64>, y: Vec<u64>) -> PyResult<f64> {
    let x: BTreeSet<u64> = x.into_iter().collect();
    let y: BTreeSet<u64> = y.into_iter().collect();
    demp_core::engine::overlap_ratio(&x, &y).map_err(value_err)
}

/// Trains a ReLU MLP on Gaussian blobs with optional asymmetric or symmetric
/// noise and dynamic pruning. Returns a dict with losses, final dead count,
/// final accuracy and the final hidden widths.
#[pyfunction]
#[pyo3(signature = (steps = 300, seed = 0, hidden = vec![32, 16], sigma2 = 0.0, noise = "off", prune_period = 0, lr = 0.01))]
#[allow(clippy::too_many_arguments)]
fn train_blobs<'py>(
    py: Python<'py>,
    steps: u64,
    seed: u64,
    hidden: Vec<usize>,
    sigma2: f64,
    noise: &str,
    prune_period: u64,
    lr: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let noise_mode = match noise {
        "off" => NoiseMode::Off,
        "asymmetric" => NoiseMode::Asymmetric,
        "symmetric" => NoiseMode::Symmetric,
        other => return Err(PyValueError::new_err(format!("unknown noise mode '{other}'"))),
    };
    let outcome = py
        .detach(|| {
            let ds = synth_blobs(4, 100, 8, 3.0, 1)?;
            let net = mlp(&[8], &hidden, 4, Activation::Relu, false, &mut ChaCha8Rng::seed_from_u64(seed))?;
            let opt = Optimizer::new(OptimizerKind::adam(1e-8), &net)?;
            let mut demp = DempConfig::disabled(steps);
            if sigma2 > 0.0 {
                demp.sigma2 = ScheduleSpec::one_cycle(sigma2, steps, 0.1);
            }
            demp.noise_mode = noise_mode;
            demp.dynamic_pruning = prune_period > 0;
            demp.prune_period = prune_period.max(1);
            demp.probe_size = 128;
            let mut settings = TrainSettings::new(steps, 32, lr);
            settings.data_seed = seed;
            let data = TrainData { train: &ds, eval: Some(&ds) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            train_demp(net, &data, opt, &demp, &settings, &mut rng)
        })
        .map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("losses", &outcome.losses)?;
    d.set_item("dead_count", outcome.final_dead_count())?;
    d.set_item("accuracy", outcome.final_eval_accuracy())?;
    d.set_item("widths", outcome.net.neuron_units().iter().map(|u| u.1).collect::<Vec<_>>())?;
    d.set_item("aborted", outcome.aborted.clone())?;
    Ok(d)
}

#[pymodule]
fn demp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(survival_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_absorbing, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov, m)?)?;
    m.add_function(wrap_pyfunction!(mu_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(lemma2_bound, m)?)?;
    m.add_function(wrap_pyfunction!(schedule_values, m)?)?;
    m.add_function(wrap_pyfunction!(overlap_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(train_blobs, m)?)?;
    Ok(())
}
