//! Finite-difference and algebraic checks for every differentiable op.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rffsb_nn::gradcheck::{check_input, check_params};
use rffsb_nn::init::uniform;
use rffsb_nn::layers::{BatchNorm1d, Conv1d, ConvTranspose1d, Ctx, Dense};
use rffsb_nn::ops::{self, conv_out_len, conv_transpose_out_len};
use rffsb_nn::{Graph, ParamStore, Tensor, Var};

const TOL: f64 = 1e-4;
const H: f64 = 1e-6;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    uniform(shape, 1.0, &mut rng)
}

/// Weighted sum so every output element contributes a distinct gradient.
fn probe<'g>(y: Var<'g, f64>, seed: u64) -> rffsb_nn::Result<Var<'g, f64>> {
    let w = rand_tensor(&y.shape(), seed ^ 0xabcdef);
    let wv = y.graph().constant(w);
    Ok(y.mul(wv)?.sum())
}

#[test]
fn conv_hand_example() {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(&[1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
    let w = g.constant(Tensor::new(&[1, 1, 2], vec![1.0, 1.0]).unwrap());
    let b = g.constant(Tensor::zeros(&[1]));
    let y = ops::conv1d(x, w, b, 1, 0).unwrap();
    assert_eq!(y.value().data(), &[3.0, 5.0]);
}

#[test]
fn conv_identity_kernel() {
    let g = Graph::<f64>::new();
    let xt = rand_tensor(&[2, 3, 7], 1);
    let x = g.constant(xt.clone());
    let mut w = Tensor::zeros(&[3, 3, 1]);
    for c in 0..3 {
        w.data_mut()[c * 3 + c] = 1.0;
    }
    let y = ops::conv1d(x, g.constant(w), g.constant(Tensor::zeros(&[3])), 1, 0).unwrap();
    assert_eq!(y.value().data(), xt.data());

    let yt = ops::conv1d_transpose(
        g.constant(xt.clone()),
        g.constant(Tensor::full(&[3, 1, 1], 1.0).reshaped(&[3, 1, 1]).unwrap()),
        g.constant(Tensor::zeros(&[1])),
        1,
        0,
        0,
    );
    assert!(yt.is_ok());
    let single = ops::conv1d_transpose(
        g.constant(Tensor::new(&[1, 1, 4], vec![1.0, -2.0, 3.0, 0.5]).unwrap()),
        g.constant(Tensor::full(&[1, 1, 1], 1.0)),
        g.constant(Tensor::zeros(&[1])),
        1,
        0,
        0,
    )
    .unwrap();
    assert_eq!(single.value().data(), &[1.0, -2.0, 3.0, 0.5]);
}

#[test]
fn encoder_decoder_lengths() {
    assert_eq!(conv_out_len(5120, 5, 2, 2), Some(2560));
    assert_eq!(conv_out_len(2560, 5, 2, 2), Some(1280));
    assert_eq!(conv_out_len(1280, 5, 2, 2), Some(640));
    assert_eq!(conv_transpose_out_len(640, 5, 2, 2, 1), Some(1280));
    assert_eq!(conv_transpose_out_len(2560, 5, 2, 2, 1), Some(5120));
    assert_eq!(conv_out_len(3, 5, 1, 0), None);
}

#[test]
fn conv_shape_errors_name_the_axis() {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 8]));
    let w = g.constant(Tensor::zeros(&[4, 3, 3]));
    let b = g.constant(Tensor::zeros(&[4]));
    let err = ops::conv1d(x, w, b, 1, 1).unwrap_err().to_string();
    assert!(err.contains("in_channels"), "{err}");
    let w = g.constant(Tensor::zeros(&[4, 2, 3]));
    let b = g.constant(Tensor::zeros(&[5]));
    let err = ops::conv1d(x, w, b, 1, 1).unwrap_err().to_string();
    assert!(err.contains("out_channels"), "{err}");
}

#[test]
fn backward_examples() {
    let g = Graph::<f64>::new();
    let x = g.input(Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap());
    let grads = g.backward(x.sum()).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0, 1.0]);

    let g = Graph::<f64>::new();
    let x = g.input(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    let grads = g.backward(x.square().sum()).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0]);

    let g = Graph::<f64>::new();
    let x = g.input(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    assert!(g.backward(x).is_err(), "non-scalar loss must be rejected");
}

#[test]
fn gradients_accumulate_until_zeroed() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("p", Tensor::new(&[2], vec![1.0, 2.0]).unwrap(), true);
    for _ in 0..3 {
        let g = Graph::new();
        let p = g.param(&store, id);
        let grads = g.backward(p.square().sum()).unwrap();
        store.accumulate(&grads);
    }
    assert_eq!(store.grad(id).unwrap(), &[6.0, 12.0]);
    store.zero_grad();
    assert_eq!(store.grad(id).unwrap(), &[0.0, 0.0]);
}

#[test]
fn uniform_logits_cross_entropy_is_ln_c() {
    for c in [2usize, 10, 37] {
        let g = Graph::<f64>::new();
        let logits = g.constant(Tensor::full(&[3, c], 0.7));
        let ce = ops::softmax_cross_entropy(logits, &[0, 1, c - 1]).unwrap();
        assert!((ce.item() - (c as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    for (seed, (cin, cout, k, stride, pad, len)) in [
        (1u64, (2usize, 3usize, 5usize, 2usize, 2usize, 16usize)),
        (2, (1, 4, 3, 1, 1, 9)),
        (3, (3, 2, 4, 3, 0, 13)),
    ] {
        let lout = conv_out_len(len, k, stride, pad).unwrap();
        // choose output_padding so the transpose maps back to `len`
        let base = conv_transpose_out_len(lout, k, stride, pad, 0).unwrap();
        let op = len - base;
        let x = rand_tensor(&[2, cin, len], seed);
        let y = rand_tensor(&[2, cout, lout], seed + 10);
        let w = rand_tensor(&[cout, cin, k], seed + 20);
        let g = Graph::<f64>::new();
        let cx = ops::conv1d(
            g.constant(x.clone()),
            g.constant(w.clone()),
            g.constant(Tensor::zeros(&[cout])),
            stride,
            pad,
        )
        .unwrap();
        let ty = ops::conv1d_transpose(
            g.constant(y.clone()),
            g.constant(w),
            g.constant(Tensor::zeros(&[cin])),
            stride,
            pad,
            op,
        )
        .unwrap();
        assert_eq!(ty.shape(), vec![2, cin, len]);
        let lhs: f64 = cx.value().data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.value().data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}

#[test]
fn elementwise_and_loss_ops_match_finite_differences() {
    let x = rand_tensor(&[2, 3, 4], 5);
    let cases: Vec<(&str, Box<dyn for<'g> Fn(Var<'g, f64>) -> rffsb_nn::Result<Var<'g, f64>>>)> = vec![
        ("relu", Box::new(|v| probe(v.relu(), 1))),
        ("square", Box::new(|v| probe(v.square(), 2))),
        ("exp", Box::new(|v| probe(v.exp(), 3))),
        ("scale", Box::new(|v| probe(v.scale(-1.7).add_scalar(0.3), 4))),
        ("pool", Box::new(|v| probe(v.global_avg_pool()?, 5))),
        ("flatten", Box::new(|v| probe(v.flatten()?, 6))),
        (
            "concat",
            Box::new(|v| {
                let c = ops::concat(&[v, v.square()], 1)?;
                probe(c, 7)
            }),
        ),
        (
            "mse",
            Box::new(|v| {
                let t = v.graph().constant(rand_tensor(&[2, 3, 4], 99));
                ops::mse(v, t)
            }),
        ),
        (
            "cross_entropy",
            Box::new(|v| {
                let logits = v.reshape(&[2, 12])?;
                ops::softmax_cross_entropy(logits, &[3, 11])
            }),
        ),
        (
            "kl",
            Box::new(|v| {
                let f = v.flatten()?;
                ops::kl_standard_normal(f, f.scale(0.5))
            }),
        ),
        (
            "gaussian_sample",
            Box::new(|v| {
                let eps = rand_tensor(&[2, 3, 4], 42);
                let z = ops::gaussian_sample(v, v.scale(0.3), &eps)?;
                probe(z, 8)
            }),
        ),
        (
            "channel_bias",
            Box::new(|v| {
                let b = v.graph().constant(Tensor::new(&[3], vec![0.1, -0.2, 0.3]).unwrap());
                probe(v.add_channel_bias(b)?, 9)
            }),
        ),
    ];
    for (name, f) in cases {
        let r = check_input(&x, H, |v| f(v)).unwrap();
        assert!(r.rel_error() < TOL, "{name}: rel err {}", r.rel_error());
    }
}

struct Layers {
    conv: Conv1d,
    convt: ConvTranspose1d,
    bn: BatchNorm1d,
    dense: Dense,
    seed: u64,
}

impl Layers {
    fn forward<'g>(
        &self,
        g: &'g Graph<f64>,
        s: &ParamStore<f64>,
        xin: Var<'g, f64>,
    ) -> rffsb_nn::Result<Var<'g, f64>> {
        let ctx = Ctx::new(g, s);
        let h = self.conv.forward(&ctx, xin)?;
        let (h, _) = self.bn.forward(&ctx, h)?;
        let h = h.relu();
        let up = self.convt.forward(&ctx, h)?;
        let head = self.dense.forward(&ctx, h.flatten()?)?;
        let a = probe(up, self.seed)?;
        a.add(probe(head, self.seed + 7)?)
    }
}

fn layer_check(seed: u64, batch: usize, cin: usize, cout: usize, k: usize, stride: usize, len: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pad = k / 2;
    let mut store = ParamStore::<f64>::new();
    let conv = Conv1d::new(&mut store, "conv", cin, cout, k, stride, pad, &mut rng);
    let lout = conv_out_len(len, k, stride, pad).unwrap();
    let convt = ConvTranspose1d::new(&mut store, "convt", cout, cin, k, stride, pad, 0, &mut rng);
    let bn = BatchNorm1d::new(&mut store, "bn", cout);
    let dense = Dense::new(&mut store, "dense", cout * lout, 3, &mut rng);
    // non-zero biases so their gradients are exercised
    for id in [conv.bias, convt.bias, dense.bias, bn.beta] {
        let n = store.value(id).numel();
        *store.value_mut(id) = rand_tensor(&[n], seed + 3);
    }
    let x = rand_tensor(&[batch, cin, len], seed + 1);
    let ids = store.trainable_ids();
    let layers = Layers { conv, convt, bn, dense, seed };
    let r = check_params(&store, &ids, H, 40, |g, s| {
        let xin = g.constant(x.clone());
        layers.forward(g, s, xin)
    })
    .unwrap();
    assert!(r.rel_error() < TOL, "param grads rel err {}", r.rel_error());
    let r = check_input(&x, H, |xin| layers.forward(xin.graph(), &store, xin)).unwrap();
    assert!(r.rel_error() < TOL, "input grads rel err {}", r.rel_error());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn layers_match_finite_differences(
        seed in 0u64..1000,
        batch in 1usize..4,
        cin in 1usize..4,
        cout in 1usize..4,
        k in prop::sample::select(vec![1usize, 3, 5]),
        stride in 1usize..3,
        len in 6usize..14,
    ) {
        layer_check(seed, batch, cin, cout, k, stride, len);
    }

    #[test]
    fn kl_is_non_negative(mu in prop::collection::vec(-5.0f64..5.0, 8), lv in prop::collection::vec(-6.0f64..3.0, 8)) {
        let g = Graph::<f64>::new();
        let m = g.constant(Tensor::new(&[1, 8], mu).unwrap());
        let l = g.constant(Tensor::new(&[1, 8], lv).unwrap());
        let kl = ops::kl_standard_normal(m, l).unwrap().item();
        prop_assert!(kl >= -1e-12);
    }
}

#[test]
fn inference_batch_norm_matches_finite_differences() {
    let mut store = ParamStore::<f64>::new();
    let bn = BatchNorm1d::new(&mut store, "bn", 3);
    *store.value_mut(bn.running_mean) = Tensor::new(&[3], vec![0.1, -0.3, 0.2]).unwrap();
    *store.value_mut(bn.running_var) = Tensor::new(&[3], vec![0.5, 1.3, 2.0]).unwrap();
    *store.value_mut(bn.gamma) = Tensor::new(&[3], vec![1.5, -0.5, 0.7]).unwrap();
    let x = rand_tensor(&[2, 3, 5], 77);
    let r = check_input(&x, H, |v| {
        let ctx = Ctx::inference(v.graph(), &store);
        let (y, stats) = bn.forward(&ctx, v)?;
        assert!(stats.is_none());
        probe(y, 3)
    })
    .unwrap();
    assert!(r.rel_error() < TOL);
}
