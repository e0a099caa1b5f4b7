use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rffsb_nn::checkpoint;
use rffsb_nn::gradcheck::check_params;
use rffsb_nn::init::uniform;
use rffsb_nn::layers::{Conv1d, Ctx, Dense};
use rffsb_nn::ops;
use rffsb_nn::{Adam, AdamConfig, Graph, NnError, ParamStore, Tensor};

fn sgd_free_quadratic_step(store: &mut ParamStore<f64>, id: rffsb_nn::ParamId, opt: &mut Adam<f64>) {
    let g = Graph::new();
    let x = g.param(store, id);
    let loss = x.add_scalar(-3.0).square().sum();
    let grads = g.backward(loss).unwrap();
    store.zero_grad();
    store.accumulate(&grads);
    opt.step(store).unwrap();
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("x", Tensor::scalar(0.0), true);
    store.accumulate_raw(id, &[1.0]);
    let mut opt = Adam::new(
        &store,
        AdamConfig {
            lr: 0.1,
            ..Default::default()
        },
    );
    opt.step(&mut store).unwrap();
    let x = store.value(id).item();
    assert!((x + 0.1).abs() < 1e-6, "{x}");
}

#[test]
fn adam_zero_grad_leaves_params_and_decays_moments() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("x", Tensor::new(&[2], vec![1.0, -2.0]).unwrap(), true);
    let mut opt = Adam::new(&store, AdamConfig::default());
    store.accumulate_raw(id, &[0.0, 0.0]);
    opt.step(&mut store).unwrap();
    assert_eq!(store.value(id).data(), &[1.0, -2.0]);

    // after a real gradient, zero-gradient steps shrink both moments geometrically
    store.zero_grad();
    store.accumulate_raw(id, &[1.0, 1.0]);
    opt.step(&mut store).unwrap();
    let (m1, v1) = (opt.first_moment(0)[0], opt.second_moment(0)[0]);
    store.zero_grad();
    opt.step(&mut store).unwrap();
    assert!((opt.first_moment(0)[0] - 0.9 * m1).abs() < 1e-15);
    assert!((opt.second_moment(0)[0] - 0.999 * v1).abs() < 1e-15);
}

#[test]
fn adam_converges_on_quadratic() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("x", Tensor::scalar(0.0), true);
    let mut opt = Adam::new(
        &store,
        AdamConfig {
            lr: 0.1,
            ..Default::default()
        },
    );
    for _ in 0..100 {
        sgd_free_quadratic_step(&mut store, id, &mut opt);
    }
    let x = store.value(id).item();
    assert!((x - 3.0).abs() < 0.1, "x = {x}");
}

#[test]
fn adam_reports_missing_gradient_by_name() {
    let mut store = ParamStore::<f32>::new();
    store.add("encoder.weight", Tensor::zeros(&[3]), true);
    let mut opt = Adam::new(&store, AdamConfig::default());
    match opt.step(&mut store) {
        Err(NnError::MissingGrad(name)) => assert_eq!(name, "encoder.weight"),
        other => panic!("unexpected {other:?}"),
    }
}

struct Net {
    conv: Conv1d,
    dense: Dense,
}

fn build_net<T: rffsb_nn::Real>(seed: u64) -> (ParamStore<T>, Net) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let conv = Conv1d::new(&mut store, "conv", 2, 4, 3, 2, 1, &mut rng);
    let dense = Dense::new(&mut store, "dense", 4 * 8, 5, &mut rng);
    (store, Net { conv, dense })
}

impl Net {
    fn loss<'g, T: rffsb_nn::Real>(
        &self,
        g: &'g Graph<T>,
        s: &ParamStore<T>,
        x: &Tensor<T>,
        target: &Tensor<T>,
    ) -> rffsb_nn::Result<rffsb_nn::Var<'g, T>> {
        let ctx = Ctx::new(g, s);
        let h = self.conv.forward(&ctx, g.constant(x.clone()))?.relu();
        let y = self.dense.forward(&ctx, h.flatten()?)?;
        ops::mse(y, g.constant(target.clone()))
    }
}

#[test]
fn composite_net_matches_finite_differences() {
    let (store, net) = build_net::<f64>(3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Tensor<f64> = uniform(&[3, 2, 16], 1.0, &mut rng);
    let t: Tensor<f64> = uniform(&[3, 5], 1.0, &mut rng);
    let ids = store.trainable_ids();
    let r = check_params(&store, &ids, 1e-6, 1000, |g, s| net.loss(g, s, &x, &t)).unwrap();
    assert!(r.rel_error() < 1e-4, "rel err {}", r.rel_error());
    assert!(r.analytic.iter().any(|v| v.abs() > 1e-6));
}

fn train_steps(seed: u64, steps: usize) -> Vec<u8> {
    let (mut store, net) = build_net::<f32>(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let x: Tensor<f32> = uniform(&[4, 2, 16], 1.0, &mut rng);
    let t: Tensor<f32> = uniform(&[4, 5], 1.0, &mut rng);
    let mut opt = Adam::new(&store, AdamConfig::default());
    for _ in 0..steps {
        let g = Graph::new();
        let loss = net.loss(&g, &store, &x, &t).unwrap();
        let grads = g.backward(loss).unwrap();
        store.zero_grad();
        store.accumulate(&grads);
        opt.step(&mut store).unwrap();
    }
    checkpoint::to_bytes(&store, &serde_json::json!({})).unwrap()
}

#[test]
fn training_is_bit_deterministic() {
    assert_eq!(train_steps(5, 10), train_steps(5, 10));
    assert_ne!(train_steps(5, 10), train_steps(6, 10));
}

#[test]
fn checkpoint_rejects_garbage() {
    assert!(checkpoint::from_bytes::<f32>(b"NOPE").is_err());
    let (store, _) = build_net::<f32>(1);
    let bytes = checkpoint::to_bytes(&store, &serde_json::json!({"arch": "net"})).unwrap();
    assert!(checkpoint::from_bytes::<f64>(&bytes).is_err(), "dtype mismatch");
    assert!(checkpoint::from_bytes::<f32>(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn checkpoint_file_round_trip_and_load_into() {
    let (store, _) = build_net::<f32>(11);
    let dir = std::env::temp_dir().join(format!("rffsb-nn-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("net.rfnn");
    let meta = serde_json::json!({"arch": "net", "widths": [4]});
    checkpoint::save(&path, &store, &meta).unwrap();
    let (other, _) = build_net::<f32>(12);
    let mut other = other;
    let got_meta = checkpoint::load_into(&mut other, &std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(got_meta, meta);
    for ((_, a), (_, b)) in store.iter().zip(other.iter()) {
        assert_eq!(a.value(), b.value());
    }
    std::fs::remove_dir_all(&dir).ok();
}

proptest! {
    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        vals in prop::collection::vec(any::<f32>(), 1..64),
        dvals in prop::collection::vec(any::<f64>(), 1..16),
    ) {
        let mut store = ParamStore::<f32>::new();
        store.add("a", Tensor::new(&[vals.len()], vals.clone()).unwrap(), true);
        store.add("b.buffer", Tensor::scalar(1.5), false);
        let bytes = checkpoint::to_bytes(&store, &serde_json::json!({"k": 1})).unwrap();
        let (back, meta) = checkpoint::from_bytes::<f32>(&bytes).unwrap();
        prop_assert_eq!(meta, serde_json::json!({"k": 1}));
        let got: Vec<u32> = back.value(rffsb_nn::ParamId(0)).data().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u32> = vals.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(got, want);
        prop_assert!(!back.get(rffsb_nn::ParamId(1)).trainable());
        prop_assert_eq!(checkpoint::to_bytes(&back, &serde_json::json!({"k": 1})).unwrap(), bytes);

        let mut ds = ParamStore::<f64>::new();
        ds.add("d", Tensor::new(&[dvals.len()], dvals.clone()).unwrap(), true);
        let (dback, _) = checkpoint::from_bytes::<f64>(&checkpoint::to_bytes(&ds, &serde_json::Value::Null).unwrap()).unwrap();
        let got: Vec<u64> = dback.value(rffsb_nn::ParamId(0)).data().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u64> = dvals.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(got, want);
    }
}
