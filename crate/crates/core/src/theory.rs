//! Monte-Carlo simulators for the random-walk model of neuron death and their
//! closed forms.
//!
//! Every trajectory draws from its own generator, derived from the master seed
//! and the trajectory index, so results do not depend on evaluation order.
//! The inner loops use xoshiro256++ seeded from a ChaCha8 stream per index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stream reserved for `mu_estimate`, disjoint from trajectory streams.
const MU_STREAM: u64 = u64::MAX;

fn stream_rng(seed: u64, stream: u64) -> Xoshiro256PlusPlus {
    let mut root = ChaCha8Rng::seed_from_u64(seed);
    root.set_stream(stream);
    Xoshiro256PlusPlus::from_rng(&mut root)
}

fn invalid(msg: String) -> Error {
    Error::InvalidArgument(msg)
}

/// Brownian motion `dw = sqrt(eta) dB` started at `w0`, killed at the first
/// substep with `w <= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub w0: f64,
    pub eta: f64,
    /// Horizon in continuous time.
    pub t: f64,
    pub n_sub: u64,
    pub trajectories: u64,
    pub seed: u64,
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w0 > 0.0 && self.w0.is_finite()) {
            return Err(invalid(format!("w0 = {} must be positive", self.w0)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid(format!("eta = {} must be positive", self.eta)));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(invalid(format!("t = {} must be positive", self.t)));
        }
        if self.n_sub == 0 || self.trajectories == 0 {
            return Err(invalid("n_sub and trajectories must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalEstimate {
    pub survival: f64,
    /// Binomial standard error `sqrt(p (1 - p) / N)`.
    pub stderr: f64,
    pub trajectories: u64,
}

pub fn simulate_absorbing(cfg: &WalkConfig) -> Result<SurvivalEstimate> {
    cfg.validate()?;
    let step = (cfg.eta * cfg.t / cfg.n_sub as f64).sqrt();
    let mut alive = 0u64;
    for i in 0..cfg.trajectories {
        let mut rng = stream_rng(cfg.seed, i);
        let mut w = cfg.w0;
        let mut survived = true;
        for _ in 0..cfg.n_sub {
            let z: f64 = rng.sample(StandardNormal);
            w += step * z;
            if w <= 0.0 {
                survived = false;
                break;
            }
        }
        alive += survived as u64;
    }
    let n = cfg.trajectories as f64;
    let p = alive as f64 / n;
    Ok(SurvivalEstimate {
        survival: p,
        stderr: (p * (1.0 - p) / n).sqrt(),
        trajectories: cfg.trajectories,
    })
}

/// `erf(w0 / sqrt(2 eta t))`.
pub fn survival_closed_form(w0: f64, eta: f64, t: f64) -> Result<f64> {
    if !(w0 > 0.0 && eta > 0.0 && t > 0.0) || !(w0 * eta * t).is_finite() {
        return Err(invalid(format!("need w0, eta, t > 0 (got {w0}, {eta}, {t})")));
    }
    Ok(libm::erf(w0 / (2.0 * eta * t).sqrt()))
}

/// Bounded noise laws, symmetric about zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum NoiseLaw {
    /// Uniform on `[-c, c]`; variance `c^2 / 3`.
    Uniform { c: f64 },
    /// `+c` or `-c` with equal probability; variance `c^2`.
    Rademacher { c: f64 },
}

impl NoiseLaw {
    /// Uniform law with the given variance (`c = sigma * sqrt(3)`).
    pub fn uniform_with_variance(sigma2: f64) -> Self {
        NoiseLaw::Uniform { c: (3.0 * sigma2).sqrt() }
    }

    pub fn rademacher_with_variance(sigma2: f64) -> Self {
        NoiseLaw::Rademacher { c: sigma2.sqrt() }
    }

    pub fn bound(&self) -> f64 {
        match *self {
            NoiseLaw::Uniform { c } | NoiseLaw::Rademacher { c } => c,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            NoiseLaw::Uniform { c } => c * c / 3.0,
            NoiseLaw::Rademacher { c } => c * c,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseLaw::Uniform { c } => c * (2.0 * rng.random::<f64>() - 1.0),
            NoiseLaw::Rademacher { c } => {
                if rng.random::<bool>() {
                    c
                } else {
                    -c
                }
            }
        }
    }
}

/// `w_{t+1} = w_t - eta (h + zeta_t) w_t` with i.i.d. bounded `zeta_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeomWalkConfig {
    pub h: f64,
    pub eta: f64,
    pub noise: NoiseLaw,
    pub steps: u64,
    pub trajectories: u64,
    pub seed: u64,
}

/// Largest learning rate keeping every factor `1 - eta (h + zeta)` positive.
pub fn stability_limit(h: f64, c: f64) -> f64 {
    1.0 / (h.abs() + c)
}

impl GeomWalkConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.noise.bound();
        if !(self.eta > 0.0 && self.eta.is_finite() && self.h.is_finite() && c >= 0.0 && c.is_finite()) {
            return Err(invalid(format!(
                "eta = {}, h = {}, c = {c} must be finite with eta > 0, c >= 0",
                self.eta, self.h
            )));
        }
        if self.eta * (self.h.abs() + c) >= 1.0 {
            return Err(invalid(format!(
                "eta (|h| + c) = {} violates the stability assumption (< 1)",
                self.eta * (self.h.abs() + c)
            )));
        }
        if self.steps == 0 || self.trajectories == 0 {
            return Err(invalid("steps and trajectories must be >= 1".into()));
        }
        Ok(())
    }

    fn deterministic(&self) -> bool {
        self.noise.bound() == 0.0
    }

    fn log_factor<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        (1.0 - self.eta * (self.h + self.noise.sample(rng))).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeomEstimate {
    /// Mean over trajectories of `log|w_t / w_0| / t`.
    pub lyapunov: f64,
    /// `log|w_t / w_0| / t` for each trajectory.
    pub per_trajectory: Vec<f64>,
    /// `log|w_s / w_0|` for `s = 0..=t` along the first trajectory.
    pub log_path: Vec<f64>,
}

pub fn simulate_geometric(cfg: &GeomWalkConfig) -> Result<GeomEstimate> {
    cfg.validate()?;
    let t = cfg.steps as f64;
    if cfg.deterministic() {
        let rate = (1.0 - cfg.eta * cfg.h).ln();
        return Ok(GeomEstimate {
            lyapunov: rate,
            per_trajectory: vec![rate; cfg.trajectories as usize],
            log_path: (0..=cfg.steps).map(|s| rate * s as f64).collect(),
        });
    }
    let mut per_trajectory = Vec::with_capacity(cfg.trajectories as usize);
    let mut log_path = Vec::with_capacity(cfg.steps as usize + 1);
    for i in 0..cfg.trajectories {
        let mut rng = stream_rng(cfg.seed, i);
        let mut log_w = 0.0;
        if i == 0 {
            log_path.push(0.0);
        }
        for _ in 0..cfg.steps {
            log_w += cfg.log_factor(&mut rng);
            if i == 0 {
                log_path.push(log_w);
            }
        }
        per_trajectory.push(log_w / t);
    }
    let lyapunov = per_trajectory.iter().sum::<f64>() / per_trajectory.len() as f64;
    Ok(GeomEstimate { lyapunov, per_trajectory, log_path })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MuEstimate {
    pub mu: f64,
    pub stderr: f64,
    pub samples: u64,
}

/// Monte-Carlo mean of `log(1 - eta (h + zeta))`.
pub fn mu_estimate(cfg: &GeomWalkConfig, samples: u64) -> Result<MuEstimate> {
    cfg.validate()?;
    if samples < 2 {
        return Err(invalid("mu_estimate needs at least 2 samples".into()));
    }
    if cfg.deterministic() {
        return Ok(MuEstimate { mu: (1.0 - cfg.eta * cfg.h).ln(), stderr: 0.0, samples });
    }
    let mut rng = stream_rng(cfg.seed, MU_STREAM);
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 1..=samples {
        let x = cfg.log_factor(&mut rng);
        let delta = x - mean;
        mean += delta / k as f64;
        m2 += delta * (x - mean);
    }
    let n = samples as f64;
    Ok(MuEstimate { mu: mean, stderr: (m2 / (n - 1.0) / n).sqrt(), samples })
}

/// The quadratic `P(eta) = |h| - (eta/2)(h^2 + s2) + (eta^2/3)|h|(h^2 + 3 s2)`
/// bounding the sign of the Lyapunov exponent for negative curvature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma2Bound {
    pub h: f64,
    pub sigma2: f64,
    pub eta: f64,
    /// `P(eta)`.
    pub p_eta: f64,
    /// `min_eta P(eta) = |h| - 3 (h^2 + s2)^2 / (16 |h| (h^2 + 3 s2))`.
    pub min_p: f64,
    pub argmin: f64,
    /// Open interval on which `P < 0`, if any.
    pub negative_interval: Option<(f64, f64)>,
}

impl Lemma2Bound {
    /// Midpoint of the negative interval after intersecting it with the region
    /// where the walk is defined for noise bounded by `c`.
    pub fn admissible_midpoint(&self, c: f64) -> Option<f64> {
        let (lo, hi) = self.negative_interval?;
        let hi = hi.min(stability_limit(self.h, c));
        (hi > lo).then(|| 0.5 * (lo + hi))
    }
}

pub fn lemma2_polynomial(h: f64, sigma2: f64, eta: f64) -> f64 {
    let a = h.abs();
    a - eta / 2.0 * (h * h + sigma2) + eta * eta / 3.0 * a * (h * h + 3.0 * sigma2)
}

pub fn lemma2_bound(h: f64, sigma2: f64, eta: f64) -> Result<Lemma2Bound> {
    if !(h < 0.0 && h.is_finite()) || !(sigma2 > 0.0 && sigma2.is_finite()) || !eta.is_finite() {
        return Err(invalid(format!("need h < 0 and sigma2 > 0 (got {h}, {sigma2})")));
    }
    let abs_h = h.abs();
    let s = h * h + sigma2;
    let q = h * h + 3.0 * sigma2;
    let a = abs_h * q / 3.0;
    let b = -s / 2.0;
    let c = abs_h;
    let min_p = abs_h - 3.0 * s * s / (16.0 * abs_h * q);
    let disc = b * b - 4.0 * a * c;
    let negative_interval = (disc > 0.0).then(|| {
        // b < 0, so -b + sqrt(disc) has no cancellation.
        let big = (-b + disc.sqrt()) / (2.0 * a);
        let small = c / (a * big);
        (small, big)
    });
    Ok(Lemma2Bound {
        h,
        sigma2,
        eta,
        p_eta: lemma2_polynomial(h, sigma2, eta),
        min_p,
        argmin: -b / (2.0 * a),
        negative_interval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_reference() {
        let p = survival_closed_form(1.0, 0.01, 100.0).unwrap();
        assert!((p - 0.682_689_492_137_086).abs() < 1e-12);
        assert!(survival_closed_form(1.0, 0.01, 1e12).unwrap() < 1e-4);
        assert!(survival_closed_form(0.0, 0.01, 1.0).is_err());
    }

    #[test]
    fn far_boundary_always_survives() {
        let cfg = WalkConfig { w0: 100.0, eta: 0.01, t: 1.0, n_sub: 100, trajectories: 1000, seed: 1 };
        assert_eq!(simulate_absorbing(&cfg).unwrap().survival, 1.0);
    }

    #[test]
    fn deterministic_geometric_walk() {
        let cfg = GeomWalkConfig {
            h: 1.0,
            eta: 0.1,
            noise: NoiseLaw::Uniform { c: 0.0 },
            steps: 1000,
            trajectories: 3,
            seed: 0,
        };
        assert_eq!(simulate_geometric(&cfg).unwrap().lyapunov, 0.9f64.ln());
        assert_eq!(mu_estimate(&cfg, 10).unwrap().mu, 0.9f64.ln());
    }

    #[test]
    fn unstable_config_rejected() {
        let cfg = GeomWalkConfig {
            h: 1.0,
            eta: 0.9,
            noise: NoiseLaw::Rademacher { c: 0.2 },
            steps: 10,
            trajectories: 1,
            seed: 0,
        };
        assert!(simulate_geometric(&cfg).is_err());
    }

    #[test]
    fn lemma2_reference() {
        let b = lemma2_bound(-0.1, 1.0, 0.0).unwrap();
        assert_eq!(b.p_eta, 0.1);
        assert!((b.min_p - (0.1 - 0.1875 * 1.01 * 1.01 / (0.1 * 3.01))).abs() < 1e-12);
        let (lo, hi) = b.negative_interval.unwrap();
        assert!(lemma2_polynomial(-0.1, 1.0, lo).abs() < 1e-12);
        assert!(lemma2_polynomial(-0.1, 1.0, hi).abs() < 1e-12);
        assert!(lemma2_polynomial(-0.1, 1.0, b.argmin) < 0.0);
    }

    #[test]
    fn lemma2_no_interval_for_large_curvature() {
        let b = lemma2_bound(-10.0, 0.01, 0.0).unwrap();
        assert!(b.min_p > 0.0);
        assert!(b.negative_interval.is_none());
    }
}
