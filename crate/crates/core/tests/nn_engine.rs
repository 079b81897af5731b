use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sls_core::nn::{
    estimate_cost, init_network, rmse_loss, Activation, Activations, DenseLayer, Gradients, Init,
    Network, Origin, TrainConfig,
};
use sls_core::{Error, Matrix};

const ACTS: [Activation; 4] = [
    Activation::Relu,
    Activation::Sigmoid,
    Activation::Tanh,
    Activation::Identity,
];

fn random_net(rng: &mut ChaCha8Rng) -> Network {
    let depth = rng.random_range(3..=6);
    let d = rng.random_range(1..=16);
    let mut widths = vec![d];
    for _ in 0..depth - 1 {
        widths.push(rng.random_range(1..=16));
    }
    widths.push(d);
    let layers = widths
        .windows(2)
        .map(|w| {
            let act = ACTS[rng.random_range(0..4)];
            let mut l =
                DenseLayer::new_random(w[0], w[1], act, Init::UniformPm1, rng).unwrap();
            // non-zero biases so every code path is exercised
            let b: Vec<f64> = (0..w[1]).map(|_| rng.random_range(-0.5..0.5)).collect();
            l = DenseLayer::from_parts(w[0], w[1], l.weights().to_vec(), b, act, Origin::Fresh)
                .unwrap();
            l
        })
        .collect();
    Network::from_layers(layers).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Objective evaluated purely through the forward pass.
fn objective(net: &Network, x: &Matrix, t: &Matrix, lambda: f64) -> f64 {
    let out = net.predict(x).unwrap();
    let reg: f64 = net
        .layers()
        .iter()
        .flat_map(|l| l.weights())
        .map(|w| w * w)
        .sum();
    rmse_loss(&out, t).unwrap() + 0.5 * lambda * reg
}

fn with_param(net: &Network, layer: usize, idx: usize, is_weight: bool, delta: f64) -> Network {
    let layers = net
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let mut w = l.weights().to_vec();
            let mut b = l.biases().to_vec();
            if i == layer {
                if is_weight {
                    w[idx] += delta;
                } else {
                    b[idx] += delta;
                }
            }
            DenseLayer::from_parts(l.in_dim(), l.out_dim(), w, b, l.activation(), l.origin())
                .unwrap()
        })
        .collect();
    Network::from_layers(layers).unwrap()
}

fn near_relu_kink(net: &Network, x: &Matrix) -> bool {
    let (_, cache) = net.forward(x).unwrap();
    net.layers().iter().zip(cache.pre_activations()).any(|(l, z)| {
        l.activation() == Activation::Relu && z.as_slice().iter().any(|v| v.abs() < 1e-3)
    })
}

/// Returns the worst mixed error |a - n| / max(1, |a|, |n|) over all parameters.
fn gradient_check(net: &Network, x: &Matrix, t: &Matrix, lambda: f64) -> f64 {
    let (_, cache) = net.forward(x).unwrap();
    let (_, grads) = net.backward(&cache, t, lambda).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (li, l) in net.layers().iter().enumerate() {
        for (is_weight, n, g) in [
            (true, l.weights().len(), &grads.layers[li].weights),
            (false, l.biases().len(), &grads.layers[li].biases),
        ] {
            for idx in 0..n {
                let plus = objective(&with_param(net, li, idx, is_weight, h), x, t, lambda);
                let minus = objective(&with_param(net, li, idx, is_weight, -h), x, t, lambda);
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = g[idx];
                let err = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
                worst = worst.max(err);
            }
        }
    }
    worst
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 24 {
        let net = random_net(&mut rng);
        let rows = rng.random_range(1..=5);
        let x = random_matrix(&mut rng, rows, net.input_dim());
        let t = random_matrix(&mut rng, rows, net.input_dim());
        if near_relu_kink(&net, &x) {
            continue;
        }
        let lambda = if checked % 2 == 0 { 0.0 } else { 1e-3 };
        let worst = gradient_check(&net, &x, &t, lambda);
        assert!(worst < 1e-5, "net {checked} widths {:?}: error {worst:e}", net.widths());
        checked += 1;
    }
}

#[test]
fn identity_network_passes_input_through() {
    let eye = |n: usize| {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        w
    };
    let layers = (0..3)
        .map(|_| {
            DenseLayer::from_parts(3, 3, eye(3), vec![0.0; 3], Activation::Identity, Origin::Fresh)
                .unwrap()
        })
        .collect();
    let net = Network::from_layers(layers).unwrap();
    let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.5], vec![0.0, 0.25, -7.0]]).unwrap();
    assert_eq!(net.predict(&x).unwrap(), x);
}

#[test]
fn relu_on_negative_preactivations_is_zero() {
    let l1 = DenseLayer::from_parts(2, 2, vec![-1.0, 0.0, 0.0, -1.0], vec![-0.1, -0.1], Activation::Relu, Origin::Fresh).unwrap();
    let l2 = DenseLayer::from_parts(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![-1.0, -1.0], Activation::Relu, Origin::Fresh).unwrap();
    let net = Network::from_layers(vec![l1, l2]).unwrap();
    let x = Matrix::from_rows(&[vec![0.5, 2.0], vec![3.0, 0.0]]).unwrap();
    assert!(net.predict(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn output_shape_follows_batch() {
    let cfg = TrainConfig::default();
    let net = init_network(&[6, 4, 3, 6], Activation::Tanh, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_matrix(&mut rng, 5, 6);
    let out = net.predict(&x).unwrap();
    assert_eq!((out.rows(), out.cols()), (5, 6));
}

#[test]
fn dimension_mismatch_names_layer() {
    let net = init_network(&[4, 2, 4], Activation::Tanh, &TrainConfig::default()).unwrap();
    match net.predict(&Matrix::zeros(2, 3)) {
        Err(Error::Shape { context, expected: 4, found: 3 }) => assert!(context.contains("layer 0")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn init_is_deterministic_bounded_and_zero_biased() {
    let cfg = TrainConfig {
        seed: 99,
        ..TrainConfig::default()
    };
    let a = init_network(&[4, 2, 4], Activation::Sigmoid, &cfg).unwrap();
    let b = init_network(&[4, 2, 4], Activation::Sigmoid, &cfg).unwrap();
    assert_eq!(a, b);
    for l in a.layers() {
        assert!(l.weights().iter().all(|w| (-1.0..=1.0).contains(w)));
        assert!(l.biases().iter().all(|&b| b == 0.0));
        assert_eq!(l.origin(), Origin::Fresh);
    }
    let c = init_network(&[4, 2, 4], Activation::Sigmoid, &TrainConfig { seed: 100, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn invalid_shapes_are_config_errors() {
    let cfg = TrainConfig::default();
    assert!(matches!(init_network(&[], Activation::Relu, &cfg), Err(Error::Config(_))));
    assert!(matches!(init_network(&[4, 4], Activation::Relu, &cfg), Err(Error::Config(_))));
    assert!(matches!(init_network(&[4, 0, 4], Activation::Relu, &cfg), Err(Error::Config(_))));
    assert!(init_network(&[4, 2, 3], Activation::Relu, &cfg).is_err());
}

#[test]
fn perfect_reconstruction_has_zero_gradient_without_l2() {
    let cfg = TrainConfig::default();
    let net = init_network(&[3, 5, 3], Activations::new(Activation::Tanh, Activation::Identity), &cfg).unwrap();
    let x = Matrix::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
    let (out, cache) = net.forward(&x).unwrap();
    // targets equal to the outputs: RMSE 0, subgradient 0
    let (loss, grads) = net.backward(&cache, &out, 0.0).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(grads.max_abs(), 0.0);
}

#[test]
fn l2_only_gradient_is_lambda_times_weight() {
    let cfg = TrainConfig::default();
    let net = init_network(&[3, 4, 3], Activation::Sigmoid, &cfg).unwrap();
    let x = Matrix::from_rows(&[vec![0.3, -0.2, 0.9]]).unwrap();
    let (out, cache) = net.forward(&x).unwrap();
    let lambda = 1e-8;
    let (_, g) = net.backward(&cache, &out, lambda).unwrap();
    for (gl, l) in g.layers.iter().zip(net.layers()) {
        for (gw, w) in gl.weights.iter().zip(l.weights()) {
            assert_eq!(*gw, lambda * w);
        }
        assert!(gl.biases.iter().all(|&b| b == 0.0));
    }
}

#[test]
fn regularization_shifts_gradients_by_exactly_lambda_w() {
    let cfg = TrainConfig::default();
    let net = init_network(&[5, 7, 3, 7, 5], Activations::new(Activation::Tanh, Activation::Sigmoid), &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_matrix(&mut rng, 4, 5);
    let (_, cache) = net.forward(&x).unwrap();
    let (_, g0) = net.backward(&cache, &x, 0.0).unwrap();
    let (_, g1) = net.backward(&cache, &x, 1e-8).unwrap();
    for ((a, b), l) in g0.layers.iter().zip(&g1.layers).zip(net.layers()) {
        for ((ga, gb), w) in a.weights.iter().zip(&b.weights).zip(l.weights()) {
            assert_eq!(*gb, ga + 1e-8 * w);
        }
    }
}

#[test]
fn backward_rejects_stale_cache() {
    let cfg = TrainConfig::default();
    let mut net = init_network(&[3, 2, 3], Activation::Tanh, &cfg).unwrap();
    let x = Matrix::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap();
    let (_, cache) = net.forward(&x).unwrap();
    let zero = Gradients::zeros_like(&net);
    sls_core::nn::sgd_step(&mut net, &zero, 0.1).unwrap();
    assert!(matches!(net.backward(&cache, &x, 0.0), Err(Error::StaleCache)));
}

#[test]
fn multiplication_counter_matches_cost_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10 {
        let net = random_net(&mut rng);
        let rows = rng.random_range(1..=9);
        let x = random_matrix(&mut rng, rows, net.input_dim());
        let (_, counted) = net.forward_counting(&x).unwrap();
        let est = estimate_cost(&net.widths(), rows as u64).unwrap();
        assert_eq!(counted, est.mult_forward_total, "widths {:?}", net.widths());
    }
}
