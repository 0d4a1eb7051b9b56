use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check_layer;
use super::*;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

#[test]
fn dense_with_zero_weights_outputs_zero() {
    let mut params = ModelParams::new();
    let net = Sequential::build(
        &[LayerSpec::Dense {
            fan_in: 3,
            fan_out: 2,
        }],
        &mut params,
        "d",
        &mut rng(),
    )
    .unwrap();
    for id in params.ids().collect::<Vec<_>>() {
        params
            .tensor_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let (out, ..) = forward(&net, &params, &Tensor::vector(vec![1.0, -2.0, 3.0])).unwrap();
    assert_eq!(out.data(), &[0.0, 0.0]);
}

#[test]
fn relu_clamps_negatives() {
    let params = ModelParams::new();
    let net = Sequential {
        layers: vec![Layer::Relu],
    };
    let (out, ..) = forward(&net, &params, &Tensor::vector(vec![-1.0, 0.0, 2.0])).unwrap();
    assert_eq!(out.data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn delta_kernel_conv_is_identity() {
    let mut params = ModelParams::new();
    let spec = LayerSpec::Conv1d {
        channels_in: 3,
        channels_out: 3,
        kernel: 3,
    };
    let net = Sequential::build(&[spec], &mut params, "c", &mut rng()).unwrap();
    let Layer::Conv1d(conv) = net.layers[0] else {
        unreachable!()
    };
    let w = params.tensor_mut(conv.weight).data_mut();
    w.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..3 {
        w[(c * 3 + c) * 3 + 1] = 1.0;
    }
    let input = Tensor::matrix(3, 5, (0..15).map(|v| v as f64 * 0.7 - 3.0).collect()).unwrap();
    let (out, ..) = forward(&net, &params, &input).unwrap();
    assert_eq!(out.data(), input.data());
    assert_eq!(out.shape(), &[3, 5]);
}

#[test]
fn conv_same_padding_keeps_length() {
    for len in [1, 2, 5, 8] {
        let mut params = ModelParams::new();
        let spec = LayerSpec::Conv1d {
            channels_in: 2,
            channels_out: 4,
            kernel: 3,
        };
        let net = Sequential::build(&[spec], &mut params, "c", &mut rng()).unwrap();
        let (out, ..) = forward(&net, &params, &Tensor::zeros(vec![2, len])).unwrap();
        assert_eq!(out.shape(), &[4, len]);
    }
}

#[test]
fn sum_of_dense_output_gives_outer_product_gradient() {
    let mut params = ModelParams::new();
    let net = Sequential::build(
        &[LayerSpec::Dense {
            fan_in: 2,
            fan_out: 2,
        }],
        &mut params,
        "d",
        &mut rng(),
    )
    .unwrap();
    let Layer::Dense(d) = net.layers[0] else {
        unreachable!()
    };
    let (_, tape, _, y) = forward(&net, &params, &Tensor::vector(vec![3.0, -5.0])).unwrap();
    let grads = backward(&tape, y, &Tensor::vector(vec![1.0, 1.0])).unwrap();
    // d(sum(W x + b))/dW = ones ⊗ x
    assert_eq!(grads.params.get(d.weight).unwrap(), &[3.0, -5.0, 3.0, -5.0]);
    assert_eq!(grads.params.get(d.bias).unwrap(), &[1.0, 1.0]);
}

#[test]
fn zero_upstream_gives_zero_param_grads() {
    let mut params = ModelParams::new();
    let specs = [
        LayerSpec::Lstm {
            input: 3,
            hidden: 4,
        },
        LayerSpec::Conv1d {
            channels_in: 4,
            channels_out: 2,
            kernel: 3,
        },
    ];
    let net = Sequential::build(&specs, &mut params, "n", &mut rng()).unwrap();
    let input = Tensor::matrix(3, 4, (0..12).map(|v| v as f64 / 10.0).collect()).unwrap();
    let (out, tape, _, y) = forward(&net, &params, &input).unwrap();
    let grads = backward(&tape, y, &Tensor::zeros(out.shape().to_vec())).unwrap();
    for id in params.ids() {
        assert!(grads.params.get(id).unwrap().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn shape_errors_name_the_layer() {
    let mut params = ModelParams::new();
    let net = Sequential::build(
        &[LayerSpec::Dense {
            fan_in: 3,
            fan_out: 2,
        }],
        &mut params,
        "head",
        &mut rng(),
    )
    .unwrap();
    let Err(err) = forward(&net, &params, &Tensor::vector(vec![1.0, 2.0])) else {
        panic!("expected a shape error");
    };
    assert!(err.to_string().contains("head.0"), "{err}");
}

#[test]
fn backward_rejects_foreign_var() {
    let params = ModelParams::new();
    let mut big = Tape::new(&params);
    for _ in 0..3 {
        big.input(vec![1], vec![1.0]).unwrap();
    }
    let foreign = big.input(vec![1], vec![1.0]).unwrap();
    let small = Tape::new(&params);
    assert!(small.backward(foreign).is_err());
}

#[test]
fn even_kernel_rejected() {
    let mut params = ModelParams::new();
    let spec = LayerSpec::Conv1d {
        channels_in: 1,
        channels_out: 1,
        kernel: 2,
    };
    assert!(spec.build(&mut params, "c", &mut rng()).is_err());
}

#[test]
fn lstm_gates_bounded_and_state_finite() {
    let mut params = ModelParams::new();
    let mut r = rng();
    let lstm = LstmLayer::new(&mut params, "l", 3, 5, &mut r);
    let mut tape = Tape::new(&params);
    let steps: Vec<Var> = (0..50)
        .map(|t| {
            tape.input(vec![3], vec![(t as f64).sin() * 10.0, 5.0, -7.0])
                .unwrap()
        })
        .collect();
    let hs = lstm.run(&mut tape, &steps).unwrap();
    for h in hs {
        // h = o * tanh(c) with o in (0, 1)
        assert!(tape.value(h).iter().all(|v| v.abs() < 1.0 && v.is_finite()));
    }
}

#[test]
fn every_layer_kind_passes_gradient_check() {
    let cases: Vec<(LayerSpec, Vec<usize>)> = vec![
        (
            LayerSpec::Dense {
                fan_in: 4,
                fan_out: 3,
            },
            vec![4],
        ),
        (
            LayerSpec::Lstm {
                input: 3,
                hidden: 4,
            },
            vec![3, 3],
        ),
        (
            LayerSpec::Conv1d {
                channels_in: 3,
                channels_out: 2,
                kernel: 3,
            },
            vec![3, 5],
        ),
        (LayerSpec::Relu, vec![6]),
    ];
    for (spec, shape) in cases {
        for seed in 0..5 {
            let r = check_layer(spec, &shape, seed, 1e-4, 1e-5).unwrap();
            assert!(r.passes(1e-3), "{spec:?} seed {seed}: {r:?}");
        }
    }
}
