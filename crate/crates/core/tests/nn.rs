mod common;

use clogan::data::ImageShape;
use clogan::nn::*;
use clogan::rng::rng_from_seed;
use common::{numeric_grad, rel_err};
use ndarray::Array2;
use rand::Rng as _;

fn random_input(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from_seed(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Checks parameter and input gradients of `0.5 * ||net(x) - target||^2`.
fn check_network(net: Sequential<f64>, x: Array2<f64>) {
    let out = net.forward(&x);
    let target = random_input(out.nrows(), out.ncols(), 99);
    let trace = net.forward_trace(&x);
    let mut grads = Gradients::zeros(&net.param_sizes());
    let dx = net.backward(&trace, trace.output() - &target, Some(&mut grads.tensors), true).unwrap();

    let sizes = net.param_sizes();
    let loss = |n: &Sequential<f64>, x: &Array2<f64>| 0.5 * (n.forward(x) - &target).mapv(|v| v * v).sum();
    let cell = std::cell::RefCell::new(net);
    let numeric = numeric_grad(
        &sizes,
        |t, i| cell.borrow().param_slices()[t][i],
        |t, i, v| cell.borrow_mut().param_slices_mut()[t][i] = v,
        || loss(&cell.borrow(), &x),
        1e-6,
    );
    let err = rel_err(&grads.flat(), &numeric);
    assert!(err < 1e-4, "parameter gradient rel err {err}");

    let net = cell.into_inner();
    let xs = std::cell::RefCell::new(x.clone());
    let numeric_x = numeric_grad(
        &[x.len()],
        |_, i| xs.borrow().as_slice().unwrap()[i],
        |_, i, v| xs.borrow_mut().as_slice_mut().unwrap()[i] = v,
        || loss(&net, &xs.borrow()),
        1e-6,
    );
    let err = rel_err(dx.as_slice().unwrap(), &numeric_x);
    assert!(err < 1e-4, "input gradient rel err {err}");
}

#[test]
fn linear_and_smooth_activations_match_finite_differences() {
    let mut rng = rng_from_seed(1);
    let net = Sequential::new(vec![
        Layer::Linear(Linear::new(5, 7, &mut rng)),
        Layer::Activation(Activation::Tanh),
        Layer::Linear(Linear::new(7, 4, &mut rng)),
        Layer::Activation(Activation::Sigmoid),
        Layer::Linear(Linear::new(4, 3, &mut rng)),
    ]);
    check_network(net, random_input(6, 5, 2));
}

#[test]
fn piecewise_linear_activations_match_finite_differences() {
    let mut rng = rng_from_seed(3);
    let net = Sequential::new(vec![
        Layer::Linear(Linear::new(4, 9, &mut rng)),
        Layer::Activation(Activation::LeakyRelu(0.2)),
        Layer::Linear(Linear::new(9, 6, &mut rng)),
        Layer::Activation(Activation::Relu),
        Layer::Linear(Linear::new(6, 2, &mut rng)),
    ]);
    check_network(net, random_input(5, 4, 4));
}

#[test]
fn convolution_matches_finite_differences() {
    let mut rng = rng_from_seed(5);
    let g = ConvGeometry { channels_in: 2, channels_out: 3, kernel: 4, stride: 2, padding: 1, in_h: 6, in_w: 6 };
    let net = Sequential::new(vec![Layer::Conv2d(Conv2d::new(g, &mut rng)), Layer::Activation(Activation::Tanh)]);
    check_network(net, random_input(3, 2 * 36, 6));
}

#[test]
fn transposed_convolution_matches_finite_differences() {
    let mut rng = rng_from_seed(7);
    let up = ConvTranspose2d::new(3, 2, 3, 3, 4, 2, 1, &mut rng);
    assert_eq!(up.out_hw(), (6, 6));
    let net = Sequential::new(vec![Layer::ConvTranspose2d(up), Layer::Activation(Activation::Tanh)]);
    check_network(net, random_input(2, 3 * 9, 8));
}

#[test]
fn transposed_convolution_is_the_adjoint_of_convolution() {
    // <conv(x), y> == <x, conv^T(y)> when both share the same kernel
    let mut rng = rng_from_seed(9);
    let g = ConvGeometry { channels_in: 2, channels_out: 3, kernel: 4, stride: 2, padding: 1, in_h: 8, in_w: 8 };
    let mut conv = Conv2d::<f64>::new(g, &mut rng);
    conv.bias.fill(0.0);
    let mut up = ConvTranspose2d::<f64>::new(3, 2, 4, 4, 4, 2, 1, &mut rng);
    up.weight = conv.weight.clone().into_shape_with_order((3, 2 * 16)).unwrap();
    up.bias.fill(0.0);
    let x = random_input(1, 2 * 64, 10);
    let y = random_input(1, 3 * 16, 11);
    let lhs = (conv.forward(&x) * &y).sum();
    let rhs = (&x * &up.forward(&y)).sum();
    assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
}

#[test]
fn default_generator_has_about_1_6m_parameters() {
    let model = AcGan::<f32>::build(&ModelConfig::default(), 0).unwrap();
    let n = model.generator_param_count();
    assert!((n as f64 - 1.6e6).abs() / 1.6e6 < 0.1, "{n}");
    let img = model.generate(&LatentBatch::sample(&mut rng_from_seed(0), 2, 100, &[0, 1]), &ClassMask::all(10)).unwrap();
    assert_eq!(img.dim(), (2, 32 * 32 * 3));
    assert!(img.iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn mlp_models_accept_grayscale_and_reject_inactive_classes() {
    let cfg = ModelConfig::mlp(ImageShape::new(28, 28, 1), 10);
    let model = AcGan::<f32>::build(&cfg, 1).unwrap();
    let draws = LatentBatch::with_labels(&mut rng_from_seed(2), 100, vec![0, 1, 4]);
    let mask = ClassMask::from_classes(10, [0, 1]);
    assert!(model.generate(&draws, &mask).is_err());
    assert!(model.generate(&draws, &ClassMask::all(10)).is_ok());
}

#[test]
fn zero_latent_dim_is_a_config_error() {
    let cfg = ModelConfig { latent_dim: 0, ..ModelConfig::mlp(ImageShape::new(8, 8, 1), 3) };
    assert!(matches!(AcGan::<f32>::build(&cfg, 0), Err(clogan::Error::Config { .. })));
}

#[test]
fn snapshots_are_counted_and_frozen() {
    let cfg = ModelConfig::mlp(ImageShape::new(4, 4, 1), 2);
    let mut model = AcGan::<f32>::build(&cfg, 3).unwrap();
    assert_eq!(model.generator_snapshots(), 0);
    let frozen = model.snapshot_generator();
    assert_eq!(model.generator_snapshots(), 1);
    let draws = LatentBatch::with_labels(&mut rng_from_seed(4), 100, vec![0, 1]);
    let before = frozen.generate(&draws, &ClassMask::all(2)).unwrap();
    let mut g = model.generator.zero_grads();
    for t in &mut g.tensors {
        t.fill(1.0);
    }
    model.step_generator(&g);
    assert_eq!(frozen.generate(&draws, &ClassMask::all(2)).unwrap(), before);
    assert_ne!(model.generate(&draws, &ClassMask::all(2)).unwrap(), before);
}
