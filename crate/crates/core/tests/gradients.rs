use demp_core::nn::{fd_gradient_oracle, Activation, GradientSet, Loss, Mode, Network, NetworkBuilder, Target};
use demp_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ACTIVATIONS: [Activation; 4] = [
    Activation::Relu,
    Activation::LeakyRelu { alpha: 0.05 },
    Activation::Swish { beta: 1.0 },
    Activation::Gelu,
];

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn mlp3(act: Activation, bn: bool, rng: &mut ChaCha8Rng) -> Network {
    let mut b = NetworkBuilder::new(&[5]).dense(8, rng);
    if bn {
        b = b.batch_norm();
    }
    b.activation(act).dense(6, rng).activation(act).dense(3, rng).build().unwrap()
}

fn conv2(act: Activation, bn: bool, rng: &mut ChaCha8Rng) -> Network {
    let mut b = NetworkBuilder::new(&[2, 6, 6]).conv2d(3, (3, 3), 1, 1, rng);
    if bn {
        b = b.batch_norm();
    }
    b.activation(act).conv2d(4, (3, 3), 2, 0, rng).activation(act).dense(3, rng).build().unwrap()
}

fn analytic(net: &Network, x: &Tensor, labels: &[usize], mode: Mode) -> GradientSet {
    let (out, trace) = net.forward(x, mode).unwrap();
    let (_, dout) = Loss::SoftmaxCrossEntropy.evaluate(&out, &Target::Labels(labels)).unwrap();
    net.backward(&trace, &dout).unwrap()
}

/// Largest componentwise `|a - b| / max(|a|, |b|, floor)`.
fn max_rel_error(a: &GradientSet, b: &GradientSet) -> f64 {
    let floor = 1e-6;
    a.iter()
        .zip(b.iter())
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(&p, &q)| (p - q).abs() / p.abs().max(q.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn check(net: &Network, input_shape: &[usize], seed: u64, mode: Mode) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let mut shape = vec![4];
    shape.extend_from_slice(input_shape);
    let x = random_tensor(&shape, &mut rng);
    let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
    let fd = fd_gradient_oracle(net, &x, Loss::SoftmaxCrossEntropy, &Target::Labels(&labels), mode).unwrap();
    max_rel_error(&analytic(net, &x, &labels, mode), &fd)
}

#[test]
fn backward_matches_finite_differences_on_mlps() {
    for act in ACTIVATIONS {
        for seed in 0..10 {
            let net = mlp3(act, false, &mut ChaCha8Rng::seed_from_u64(seed));
            let err = check(&net, &[5], seed, Mode::Eval);
            assert!(err < 1e-4, "{act:?} seed {seed}: {err}");
        }
    }
}

#[test]
fn backward_matches_finite_differences_on_conv_stacks() {
    for act in ACTIVATIONS {
        for seed in 0..10 {
            let net = conv2(act, false, &mut ChaCha8Rng::seed_from_u64(seed));
            let err = check(&net, &[2, 6, 6], seed, Mode::Eval);
            assert!(err < 1e-4, "{act:?} seed {seed}: {err}");
        }
    }
}

#[test]
fn batch_norm_train_mode_gradients_include_batch_statistics() {
    for act in ACTIVATIONS {
        for seed in 0..3 {
            let net = mlp3(act, true, &mut ChaCha8Rng::seed_from_u64(seed));
            assert!(check(&net, &[5], seed, Mode::Train) < 1e-4, "mlp {act:?} {seed}");
            let net = conv2(act, true, &mut ChaCha8Rng::seed_from_u64(seed));
            assert!(check(&net, &[2, 6, 6], seed, Mode::Train) < 1e-4, "conv {act:?} {seed}");
        }
    }
}

#[test]
fn batch_norm_train_output_is_normalized_per_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = NetworkBuilder::new(&[3]).dense(4, &mut rng).batch_norm().build().unwrap();
    let x = random_tensor(&[16, 3], &mut rng);
    let (out, _) = net.forward(&x, Mode::Train).unwrap();
    for c in 0..4 {
        let col: Vec<f64> = (0..16).map(|i| out.data()[i * 4 + c]).collect();
        let mean = col.iter().sum::<f64>() / 16.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-12, "channel {c} mean {mean}");
        assert!((var - 1.0).abs() < 1e-3, "channel {c} var {var}");
    }
}
