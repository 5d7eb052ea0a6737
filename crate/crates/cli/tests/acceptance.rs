//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. MNIST criteria run the bundled configs.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use demp_cli::runner::{load_data, train_seed};
use demp_cli::{load_config, Variant};
use demp_core::data::synth_blobs;
use demp_core::engine::{
    detect_inactive, overlap_ratio, prune_step, train_demp, train_plain, DeathCriterion, DempConfig, LivenessState,
    TrainData, TrainSettings,
};
use demp_core::nn::{
    fd_gradient_oracle, mlp, remove_units, Activation, GradientSet, Layer, Loss, Mode, Network, NetworkBuilder, Target,
};
use demp_core::optim::{Optimizer, OptimizerKind};
use demp_core::schedule::ScheduleSpec;
use demp_core::theory::{
    lemma2_bound, mu_estimate, simulate_absorbing, simulate_geometric, GeomWalkConfig, NoiseLaw, WalkConfig,
};
use demp_core::Tensor;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Independent erf: Maclaurin series for |x| < 3, continued fraction beyond.
fn erf_oracle(x: f64) -> f64 {
    if x.abs() >= 3.0 {
        // erfc(x) = exp(-x^2) / sqrt(pi) * 1 / (x + 1/2 / (x + 1 / (x + 3/2 / (x + ...))))
        let mut f = x;
        for k in (1..60).rev() {
            f = x + (k as f64 / 2.0) / f;
        }
        return x.signum() * (1.0 - (-x * x).exp() / PI.sqrt() / f);
    }
    let (mut term, mut sum) = (x, x);
    for n in 1..300 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    2.0 / PI.sqrt() * sum
}

fn c01_absorbing_survival() -> Outcome {
    let mut worst = (0.0, (0.0, 0.0, 0.0));
    let mut failures = 0;
    let mut reference = f64::NAN;
    let mut seed = 0;
    for w0 in [0.5, 1.0, 2.0] {
        for eta in [0.005, 0.01, 0.05] {
            for t in [50.0, 100.0, 400.0] {
                let cfg = WalkConfig { w0, eta, t, n_sub: 10_000, trajectories: 100_000, seed };
                seed += 1;
                let est = simulate_absorbing(&cfg).unwrap();
                let exact = erf_oracle(w0 / (2.0 * eta * t).sqrt());
                if (w0, eta, t) == (1.0, 0.01, 100.0) {
                    reference = exact;
                }
                let tol = 3.0 * est.stderr + 0.005;
                let excess = (est.survival - exact).abs() / tol;
                if excess > 1.0 {
                    failures += 1;
                }
                if excess > worst.0 {
                    worst = (excess, (w0, eta, t));
                }
            }
        }
    }
    let ref_ok = (reference - 0.6827).abs() < 5e-5;
    outcome(
        failures == 0 && ref_ok,
        format!(
            "27 cells, {failures} outside tolerance; worst |mc - erf| / tol = {:.3} at {:?}; reference cell erf = {reference:.4}",
            worst.0, worst.1
        ),
    )
}

fn c02_lyapunov_concentration() -> Outcome {
    let cfg = GeomWalkConfig {
        h: 1.0,
        eta: 0.1,
        noise: NoiseLaw::Uniform { c: 0.5 },
        steps: 100_000,
        trajectories: 100,
        seed: 0,
    };
    let walk = simulate_geometric(&cfg).unwrap();
    let mu = mu_estimate(&cfg, 10_000_000).unwrap();
    let within = walk.per_trajectory.iter().filter(|l| (*l - mu.mu).abs() <= 0.01).count();
    let degenerate = GeomWalkConfig { noise: NoiseLaw::Uniform { c: 0.0 }, ..cfg };
    let d = simulate_geometric(&degenerate).unwrap();
    let exact = (1.0f64 - 0.1 * 1.0).ln();
    let degenerate_ok = d.lyapunov == exact && d.per_trajectory.iter().all(|&l| l == exact);
    outcome(
        within >= 95 && degenerate_ok,
        format!("{within}/100 trajectories within 0.01 of mu = {:.6}; c = 0 exact: {degenerate_ok}", mu.mu),
    )
}

fn c03_negative_curvature_bound() -> Outcome {
    let (h, s2) = (-0.1f64, 1.0f64);
    // Closed-form minimum of |h| - (eta/2)(h^2 + s2) + (eta^2/3)|h|(h^2 + 3 s2).
    let a = h.abs() * (h * h + 3.0 * s2) / 3.0;
    let b = -(h * h + s2) / 2.0;
    let oracle_min = h.abs() - b * b / (4.0 * a);
    let noise = NoiseLaw::uniform_with_variance(s2);
    let probe = lemma2_bound(h, s2, 0.0).unwrap();
    let Some(eta) = probe.admissible_midpoint(noise.bound()) else {
        return outcome(false, format!("no admissible negative interval: {:?}", probe.negative_interval));
    };
    let bound = lemma2_bound(h, s2, eta).unwrap();
    let cfg = GeomWalkConfig { h, eta, noise, steps: 1, trajectories: 1, seed: 0 };
    let mu = mu_estimate(&cfg, 10_000_000).unwrap();
    let min_ok = (bound.min_p - oracle_min).abs() < 1e-12 && (bound.min_p + 0.5355).abs() < 1e-4;
    let interval_ok = bound.negative_interval.is_some_and(|(lo, hi)| lo < hi) && bound.p_eta < 0.0;
    let mu_ok = mu.mu + 3.0 * mu.stderr < 0.0;
    outcome(
        min_ok && interval_ok && mu_ok,
        format!(
            "min P = {:.6} (oracle {oracle_min:.6}); interval {:?}; eta = {eta:.4}, P = {:.4}, mu = {:.5} +- {:.1e}",
            bound.min_p, bound.negative_interval, bound.p_eta, mu.mu, mu.stderr
        ),
    )
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn max_rel_error(a: &GradientSet, b: &GradientSet) -> f64 {
    a.iter()
        .zip(b.iter())
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(&p, &q)| (p - q).abs() / p.abs().max(q.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn c04_gradient_suite() -> Outcome {
    let acts = [
        Activation::Relu,
        Activation::LeakyRelu { alpha: 0.05 },
        Activation::Swish { beta: 1.0 },
        Activation::Gelu,
    ];
    let mut worst = 0.0f64;
    let mut cases = 0;
    for act in acts {
        for seed in 0..10u64 {
            let rng = &mut ChaCha8Rng::seed_from_u64(seed);
            let nets: [(Network, Vec<usize>); 2] = [
                (
                    NetworkBuilder::new(&[5])
                        .dense(8, rng)
                        .activation(act)
                        .dense(6, rng)
                        .activation(act)
                        .dense(3, rng)
                        .build()
                        .unwrap(),
                    vec![4, 5],
                ),
                (
                    NetworkBuilder::new(&[2, 6, 6])
                        .conv2d(3, (3, 3), 1, 1, rng)
                        .activation(act)
                        .conv2d(4, (3, 3), 2, 0, rng)
                        .activation(act)
                        .dense(3, rng)
                        .build()
                        .unwrap(),
                    vec![4, 2, 6, 6],
                ),
            ];
            for (net, shape) in nets {
                let x = random_tensor(&shape, rng);
                let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
                let (out, trace) = net.forward(&x, Mode::Eval).unwrap();
                let (_, dout) = Loss::SoftmaxCrossEntropy.evaluate(&out, &Target::Labels(&labels)).unwrap();
                let analytic = net.backward(&trace, &dout).unwrap();
                let fd = fd_gradient_oracle(&net, &x, Loss::SoftmaxCrossEntropy, &Target::Labels(&labels), Mode::Eval)
                    .unwrap();
                worst = worst.max(max_rel_error(&analytic, &fd));
                cases += 1;
            }
        }
    }
    outcome(worst < 1e-4, format!("{cases} cases, max componentwise relative error {worst:.2e}"))
}

fn recount(net: &Network) -> usize {
    net.layers().iter().flat_map(|l| l.params()).map(|t| t.data().len()).sum()
}

/// Incoming weights + bias, batch-norm scale and shift, and outgoing weights
/// in the next parametric layer.
fn per_unit_closed_form(net: &Network, layer: usize) -> usize {
    let shapes = net.output_shapes().unwrap();
    let spatial: usize = shapes[layer][1..].iter().product();
    let mut total = match &net.layers()[layer] {
        Layer::Dense(d) => d.inputs() + 1,
        Layer::Conv2d(c) => c.in_channels() * c.kernel().0 * c.kernel().1 + 1,
        _ => unreachable!(),
    };
    for l in &net.layers()[layer + 1..] {
        match l {
            Layer::BatchNorm(_) => total += 2,
            Layer::Activation(_) => {}
            Layer::Dense(d) => return total + d.outputs() * spatial,
            Layer::Conv2d(c) => return total + c.out_channels() * c.kernel().0 * c.kernel().1,
        }
    }
    unreachable!()
}

fn random_net(rng: &mut ChaCha8Rng) -> Network {
    let bn = rng.random_bool(0.5);
    if rng.random_bool(0.5) {
        let mut b = NetworkBuilder::new(&[6]);
        for _ in 0..rng.random_range(1..=3) {
            b = b.dense(rng.random_range(2..=9), rng);
            if bn {
                b = b.batch_norm();
            }
            b = b.activation(Activation::Relu);
        }
        b.dense(3, rng).build().unwrap()
    } else {
        let mut b = NetworkBuilder::new(&[2, 7, 7]).conv2d(rng.random_range(2..=6), (3, 3), 1, 1, rng);
        if bn {
            b = b.batch_norm();
        }
        b.activation(Activation::Relu)
            .conv2d(rng.random_range(2..=5), (3, 3), 2, 0, rng)
            .activation(Activation::Relu)
            .dense(3, rng)
            .build()
            .unwrap()
    }
}

fn c05_prune_equivalence() -> Outcome {
    // Constructed dead units: zero incoming weights, negative bias.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = mlp(&[8], &[12, 10], 4, Activation::Relu, false, &mut rng).unwrap();
    let doomed = [(0usize, vec![1usize, 5, 11]), (2, vec![0, 9])];
    for (layer, units) in &doomed {
        if let Layer::Dense(d) = &mut net.layers_mut()[*layer] {
            let n = d.inputs();
            for &u in units {
                d.weight.data_mut()[u * n..(u + 1) * n].fill(0.0);
                d.bias.data_mut()[u] = -0.5;
            }
        }
    }
    let x = random_tensor(&[32, 8], &mut rng);
    let before = net.forward(&x, Mode::Eval).unwrap().0;
    let mut live = LivenessState::new(&net);
    let mut opt = Optimizer::new(OptimizerKind::Sgd, &net).unwrap();
    detect_inactive(&net, &mut live, std::slice::from_ref(&x), DeathCriterion::ZeroOutput, 0.01).unwrap();
    let report = prune_step(&mut net, &mut live, &mut opt, 0).unwrap();
    let after = net.forward(&x, Mode::Eval).unwrap().0;
    let identical = before.data() == after.data() && report.removed == vec![3, 2];

    let mut mismatches = 0;
    let mut removals = 0;
    for seq in 0..20u64 {
        let rng = &mut ChaCha8Rng::seed_from_u64(1000 + seq);
        let mut net = random_net(rng);
        for _ in 0..5 {
            let layers: Vec<usize> = net.prunable_layers().into_iter().filter(|&l| net.units(l) >= 2).collect();
            if layers.is_empty() {
                break;
            }
            let layer = layers[rng.random_range(0..layers.len())];
            let width = net.units(layer);
            let k = rng.random_range(1..width);
            let units: BTreeSet<usize> = sample(rng, width, k).into_iter().collect();
            let expected = k * per_unit_closed_form(&net, layer);
            let next = remove_units(&net, layer, &units).unwrap();
            if recount(&net) - recount(&next) != expected || next.param_count() != recount(&next) {
                mismatches += 1;
            }
            removals += 1;
            net = next;
        }
    }
    outcome(
        identical && mismatches == 0,
        format!(
            "constructed removal bit-identical: {identical}; {removals} removals over 20 sequences, {mismatches} count mismatches"
        ),
    )
}

fn c06_degeneration() -> Outcome {
    let ds = synth_blobs(4, 100, 8, 4.0, 5).unwrap();
    let data = TrainData { train: &ds, eval: Some(&ds) };
    let mut all_equal = true;
    for kind in [OptimizerKind::Sgd, OptimizerKind::sgdm(), OptimizerKind::adam(1e-8)] {
        let net = mlp(&[8], &[32, 16], 4, Activation::Relu, false, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut s = TrainSettings::new(1000, 32, 0.01);
        s.weight_decay = 5e-4;
        let plain = train_plain(net.clone(), &data, Optimizer::new(kind, &net).unwrap(), &s).unwrap();
        let demp = train_demp(
            net.clone(),
            &data,
            Optimizer::new(kind, &net).unwrap(),
            &DempConfig::disabled(1000),
            &s,
            &mut ChaCha8Rng::seed_from_u64(7),
        )
        .unwrap();
        let params = |n: &Network| -> Vec<u64> {
            n.layers().iter().flat_map(|l| l.params()).flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
        };
        all_equal &= plain.losses == demp.losses && params(&plain.net) == params(&demp.net);
    }
    outcome(all_equal, format!("SGD, SGDM, Adam over 1000 steps: losses and parameters bitwise equal: {all_equal}"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

/// Runs every seed of every variant of a bundled config; returns
/// (label, per-seed final dead counts, per-seed final eval accuracies).
fn run_bundled(name: &str) -> Vec<(String, Vec<f64>, Vec<f64>)> {
    let path = configs_dir().join(format!("{name}.toml"));
    let (_, variants) = load_config(&path).unwrap();
    variants.iter().map(|v| run_variant(v, &configs_dir())).collect()
}

fn run_variant(v: &Variant, dir: &Path) -> (String, Vec<f64>, Vec<f64>) {
    let (train, eval) = load_data(v, dir).unwrap();
    let mut dead = Vec::new();
    let mut acc = Vec::new();
    for &seed in &v.config.seeds {
        let out = train_seed(v, seed, &train, eval.as_ref()).unwrap();
        assert!(out.aborted.is_none(), "{} seed {seed}: {:?}", v.label, out.aborted);
        dead.push(out.final_dead_count() as f64);
        acc.push(out.final_eval_accuracy().unwrap());
    }
    (v.label.clone(), dead, acc)
}

fn describe(runs: &[(String, Vec<f64>, Vec<f64>)]) -> String {
    runs.iter()
        .map(|(l, d, a)| format!("{l}: dead {d:?} mean {:.2}, acc {:.4}", mean(d), mean(a)))
        .collect::<Vec<_>>()
        .join("; ")
}

fn c07_noise_asymmetry() -> Outcome {
    let runs = run_bundled("mnist_noise_regimes");
    let asym = mean(&runs.iter().find(|r| r.0 == "asymmetric").unwrap().1);
    let sym = mean(&runs.iter().find(|r| r.0 == "symmetric").unwrap().1);
    outcome(asym >= sym, describe(&runs))
}

fn non_increasing(means: &[f64]) -> bool {
    means.windows(2).all(|w| w[1] <= w[0])
}

fn c08_adam_eps() -> Outcome {
    let runs = run_bundled("adam_eps_sweep");
    let means: Vec<f64> = runs.iter().map(|r| mean(&r.1)).collect();
    outcome(non_increasing(&means), describe(&runs))
}

fn c09_regularization_strength() -> Outcome {
    let runs = run_bundled("reg_strength_sweep");
    let means: Vec<f64> = runs.iter().map(|r| mean(&r.1)).collect();
    outcome(means.windows(2).all(|w| w[1] >= w[0]), describe(&runs))
}

fn c10_pruning_neutrality() -> Outcome {
    let runs = run_bundled("pruning_neutrality");
    let off = &runs.iter().find(|r| r.0 == "pruning_off").unwrap().2;
    let on = &runs.iter().find(|r| r.0 == "pruning_on").unwrap().2;
    let diff = (mean(on) - mean(off)).abs();
    let bound = 2.0 * sample_std(off);
    outcome(diff <= bound, format!("{}; |mean diff| = {diff:.4}, 2 sd(off) = {bound:.4}", describe(&runs)))
}

fn c11_schedule_and_overlap() -> Outcome {
    let (peak, total, rho) = (2.5, 1000u64, 0.1);
    let s = ScheduleSpec::one_cycle(peak, total, rho);
    let w = (rho * total as f64).ceil() as u64;
    let mid = (w + total) / 2;
    let oracle_mid = 0.5 * peak * (1.0 + (PI * (mid - w) as f64 / (total - w) as f64).cos());
    let checks = [
        (s.value_at(0).unwrap(), 0.0),
        (s.value_at(w / 2).unwrap(), peak * (w / 2) as f64 / w as f64),
        (s.value_at(w).unwrap(), peak),
        (s.value_at(mid).unwrap(), oracle_mid),
        (s.value_at(total).unwrap(), 0.0),
    ];
    let schedule_ok = checks.iter().all(|(a, b)| (a - b).abs() <= 1e-12);
    let set = |v: &[u32]| v.iter().copied().collect::<BTreeSet<u32>>();
    let overlaps = [
        overlap_ratio(&set(&[1, 2, 3]), &set(&[1, 2, 3])).unwrap(),
        overlap_ratio(&set(&[1, 2]), &set(&[3, 4])).unwrap(),
        overlap_ratio(&set(&[1, 2]), &set(&[2, 3, 4])).unwrap(),
    ];
    let overlap_ok = overlaps == [1.0, 0.0, 0.5];
    outcome(schedule_ok && overlap_ok, format!("schedule checks {checks:?}; overlap fixtures {overlaps:?}"))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 11] = [
        (1, "absorbing walk survival vs erf law", c01_absorbing_survival),
        (2, "Lyapunov exponent concentrates at mu", c02_lyapunov_concentration),
        (3, "negative-curvature bound and negative mu", c03_negative_curvature_bound),
        (4, "gradient suite vs finite differences", c04_gradient_suite),
        (5, "prune equivalence and parameter counts", c05_prune_equivalence),
        (6, "disabled DemP equals plain training", c06_degeneration),
        (7, "asymmetric noise kills at least as many units", c07_noise_asymmetry),
        (8, "dead units non-increasing in Adam eps", c08_adam_eps),
        (9, "dead units non-decreasing in lambda", c09_regularization_strength),
        (10, "dynamic pruning does not change accuracy", c10_pruning_neutrality),
        (11, "schedule exactness and overlap fixtures", c11_schedule_and_overlap),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {verdict} ({:.1}s) {name}: {}",
            start.elapsed().as_secs_f64(),
            result.detail
        );
        if !result.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
