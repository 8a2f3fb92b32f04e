use dbanomaly::nn::gradcheck::check_gradients;
use dbanomaly::nn::{LayerSpec, Mode, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn randomize_affines(net: &mut Network, rng: &mut ChaCha8Rng) {
    for p in net.parameters_mut() {
        if p.name == "gamma" || p.name == "beta" || p.name == "bias" {
            for v in p.value.values_mut() {
                *v = rng.random_range(0.5..1.5);
            }
        }
    }
}

fn check(specs: &[LayerSpec], input_shape: &[usize], batch: usize, mode: Mode, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::build(input_shape, specs, &mut rng).unwrap();
    randomize_affines(&mut net, &mut rng);
    let mut shape = vec![batch];
    shape.extend_from_slice(input_shape);
    let x = random_tensor(&mut rng, &shape);
    if mode == Mode::Infer {
        net.forward_train(&x).unwrap();
    }
    let mut out_shape = vec![batch];
    out_shape.extend(net.output_shape());
    let probe = random_tensor(&mut rng, &out_shape);
    let report = check_gradients(&mut net, &x, &probe, mode, STEP).unwrap();
    assert!(
        report.max_relative_error < TOLERANCE,
        "{specs:?} seed {seed}: {} at {}",
        report.max_relative_error,
        report.worst
    );
}

#[test]
fn dense_and_relu() {
    for seed in 0..5 {
        check(&[LayerSpec::Dense(4), LayerSpec::Relu, LayerSpec::Dense(3)], &[5], 3, Mode::Train, seed);
    }
}

#[test]
fn temporal_norm_and_reverse() {
    let specs = [
        LayerSpec::TemporalNorm,
        LayerSpec::Dense(5),
        LayerSpec::Relu,
        LayerSpec::DenseReverse(5),
        LayerSpec::TemporalNormReverse,
    ];
    for seed in 0..5 {
        check(&specs, &[4, 2], 3, Mode::Train, seed);
    }
}

#[test]
fn batch_norm_train_and_infer() {
    let specs = [
        LayerSpec::BatchNorm,
        LayerSpec::Dense(6),
        LayerSpec::Relu,
        LayerSpec::BatchNorm,
        LayerSpec::Dense(3),
        LayerSpec::Relu,
        LayerSpec::DenseReverse(3),
        LayerSpec::BatchNormReverse,
        LayerSpec::DenseReverse(6),
        LayerSpec::BatchNormReverse,
    ];
    for seed in 0..5 {
        check(&specs, &[3, 2], 4, Mode::Train, seed);
        check(&specs, &[3, 2], 4, Mode::Infer, seed);
    }
}
