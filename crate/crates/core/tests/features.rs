use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rffsb_core::features::*;
use rffsb_core::signal::IqFrame;
use rffsb_core::CoreError;
use rffsb_nn::gradcheck::check_input;
use rffsb_nn::{Graph, Tensor};

fn frame(rng: &mut ChaCha8Rng, n: usize) -> IqFrame {
    IqFrame::new(
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap()
}

#[test]
fn rms_normalize_gives_unit_mean_square() {
    let mut v = vec![3.0, -4.0];
    rms_normalize(&mut v);
    let ms = (v[0] * v[0] + v[1] * v[1]) / 2.0;
    assert!((ms - 1.0).abs() < 1e-15);
    assert!((v[0] / v[1] + 0.75).abs() < 1e-15);
    let mut z = vec![0.0; 4];
    rms_normalize(&mut z);
    assert_eq!(z, vec![0.0; 4]);
}

#[test]
fn raw_rows_are_channel_major_and_scale_free() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ext = Extractor::new(FeatureKind::RawIq, 40, 0).unwrap();
    assert_eq!(ext.shape(), (2, 40));
    let f = frame(&mut rng, 40);
    let a = ext.extract(&f).unwrap();
    let b = ext.extract(&f.scaled(250.0)).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
    // I rail first, then Q
    assert!((a[0] / a[40] - f.i[0] / f.q[0]).abs() < 1e-9);
    assert!(matches!(ext.extract(&frame(&mut rng, 39)), Err(CoreError::Config(_))));
}

#[test]
fn tensor_path_matches_frame_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for kind in [FeatureKind::Clps, FeatureKind::RawIq] {
        let ext = Extractor::new(kind, 64, 16).unwrap();
        let frames: Vec<IqFrame> = (0..3).map(|_| frame(&mut rng, 64)).collect();
        let mut data = Vec::new();
        for f in &frames {
            data.extend(f.to_rails::<f64>());
        }
        let g = Graph::<f64>::new();
        let y = ext.extract_var(g.constant(Tensor::new(&[3, 2, 64], data).unwrap())).unwrap();
        let (c, l) = ext.shape();
        assert_eq!(y.shape(), vec![3, c, l]);
        let yv = y.value();
        for (k, f) in frames.iter().enumerate() {
            let want = ext.extract(f).unwrap();
            let got = &yv.data()[k * c * l..(k + 1) * c * l];
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9, "{kind:?}");
            }
        }
    }
}

#[test]
fn rms_normalize_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::new(&[3, 2, 10], (0..60).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let w = Tensor::new(&[3, 2, 10], (0..60).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let r = check_input(&x, 1e-6, |v| {
        let y = rms_normalize_var(v).unwrap();
        Ok(y.mul(v.graph().constant(w.clone()))?.sum())
    })
    .unwrap();
    assert!(r.rel_error() < 1e-6, "{}", r.rel_error());
}

#[test]
fn all_zero_rows_pass_through() {
    let g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(&[2, 4]));
    let y = rms_normalize_var(x).unwrap();
    assert_eq!(y.value().data(), &[0.0; 8]);
    let grads = g.backward(y.sum()).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0; 8]);
}
