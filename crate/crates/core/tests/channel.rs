use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rffsb_core::channel::*;
use rffsb_core::signal::{make_preamble, FrameSpec, IqFrame};
use rffsb_nn::gradcheck::check_input;
use rffsb_nn::Tensor;

const DRAWS: usize = 100_000;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn default_profile_matches_training_setup() {
    let p = &builtin_profiles()["default"];
    assert_eq!(p.tap_delays_ns, vec![0.0, 50.0, 110.0, 170.0, 290.0, 310.0]);
    assert_eq!(p.tap_gains_db, vec![0.0, -3.0, -10.0, -18.0, -26.0, -32.0]);
    assert_eq!(p.k_factor, 5.0);
    assert_eq!(p.max_doppler_hz, 10.0);
    assert_eq!(p.ebn0_db, 10.0);
    let names: Vec<_> = builtin_profiles().keys().cloned().collect();
    for n in ["awgn", "default", "indoor_a", "indoor_b", "vehicular_a"] {
        assert!(names.contains(&n.to_string()), "{n}");
    }
    for n in ["indoor_a", "indoor_b", "vehicular_a"] {
        assert_eq!(builtin_profiles()[n].tap_delays_ns.len(), 6);
    }
}

#[test]
fn awgn_tap_is_unit_magnitude() {
    let spec = FrameSpec::default();
    let mut r = rng(0);
    for _ in 0..1000 {
        let h = realize(&ChannelProfile::awgn(), &spec, &mut r);
        assert_eq!(h.taps.len(), 1);
        assert!((h.taps[0].norm() - 1.0).abs() < 1e-15);
        assert_eq!(h.doppler_offset, 0.0);
    }
}

#[test]
fn rayleigh_first_tap_is_zero_mean() {
    let spec = FrameSpec::default();
    let p = ChannelProfile::indoor_a().with_k(0.0);
    let mut r = rng(1);
    let mean: Complex64 = (0..DRAWS).map(|_| realize(&p, &spec, &mut r).paths[0]).sum::<Complex64>() / DRAWS as f64;
    assert!(mean.norm() < 0.01, "{mean}");
}

#[test]
fn per_tap_powers_match_profile() {
    let spec = FrameSpec::default();
    let p = &builtin_profiles()["default"];
    let mut r = rng(2);
    let mut acc = [0.0; 6];
    let mut total = 0.0;
    for _ in 0..DRAWS {
        let h = realize(p, &spec, &mut r);
        for (a, c) in acc.iter_mut().zip(&h.paths) {
            *a += c.norm_sqr();
        }
        total += h.taps.iter().map(|c| c.norm_sqr()).sum::<f64>();
    }
    let want = p.tap_powers();
    for k in 0..6 {
        let got_db = 10.0 * (acc[k] / DRAWS as f64).log10();
        let want_db = 10.0 * want[k].log10();
        assert!((got_db - want_db).abs() < 0.15, "tap {k}: {got_db} vs {want_db}");
    }
    // relative to the first tap the gains reproduce the table
    let rel: Vec<f64> = acc.iter().map(|a| 10.0 * (a / acc[0]).log10()).collect();
    for (r, g) in rel.iter().zip(&p.tap_gains_db) {
        assert!((r - g).abs() < 0.15, "{r} vs {g}");
    }
    assert!((total / DRAWS as f64 - 1.0).abs() < 0.01);
}

#[test]
fn rician_power_split() {
    let spec = FrameSpec::default();
    for k in [1.0, 5.0, 10.0] {
        let p = ChannelProfile::indoor_a().with_k(k);
        let p0 = p.tap_powers()[0];
        let mut r = rng(3);
        let (mut los, mut scat, mut m2, mut m4) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..DRAWS {
            let h = realize(&p, &spec, &mut r);
            los += h.los.norm_sqr();
            scat += (h.paths[0] - h.los).norm_sqr();
            let e = h.paths[0].norm_sqr();
            m2 += e;
            m4 += e * e;
        }
        let n = DRAWS as f64;
        let (los, scat, m2, m4) = (los / n, scat / n, m2 / n, m4 / n);
        let want_los = p0 * k / (k + 1.0);
        let want_scat = p0 / (k + 1.0);
        assert!((los / want_los - 1.0).abs() < 0.02, "K={k} los {los} vs {want_los}");
        assert!((scat / want_scat - 1.0).abs() < 0.02, "K={k} scatter {scat} vs {want_scat}");
        // moment estimator of the line-of-sight power from the taps alone
        let a2 = (2.0 * m2 * m2 - m4).max(0.0).sqrt();
        assert!((a2 / want_los - 1.0).abs() < 0.02, "K={k} moment estimate {a2}");
        assert!(((m2 - a2) / want_scat - 1.0).abs() < 0.1, "K={k}");
    }
}

#[test]
fn identity_channel_is_exact() {
    let spec = FrameSpec::default();
    let f = make_preamble(&spec).unwrap();
    let p = ChannelProfile::awgn().with_ebn0(f64::INFINITY);
    let h = ChannelRealization::fixed(&[Complex64::new(1.0, 0.0)]);
    assert_eq!(propagate(&f, &h, &p, &spec), f);
}

#[test]
fn two_tap_impulse_response() {
    let spec = FrameSpec::default();
    let mut f = IqFrame::zeros(8);
    f.i[0] = 1.0;
    let p = ChannelProfile::awgn().with_ebn0(f64::INFINITY);
    let h = ChannelRealization::fixed(&[Complex64::new(1.0, 0.0), Complex64::new(0.5, 0.0)]);
    let y = propagate(&f, &h, &p, &spec);
    assert_eq!(&y.i[..3], &[1.0, 0.5, 0.0]);
    assert!(y.q.iter().all(|&v| v == 0.0));
}

#[test]
fn noiseless_propagation_is_linear() {
    let spec = FrameSpec::default();
    let p = builtin_profiles()["vehicular_a"].with_ebn0(f64::INFINITY).with_k(2.0);
    let mut r = rng(4);
    let h = realize(&p, &spec, &mut r);
    let rand_frame = |r: &mut ChaCha8Rng| {
        IqFrame::new(
            (0..512).map(|_| r.random_range(-1.0..1.0)).collect(),
            (0..512).map(|_| r.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    };
    let mut h = h;
    h.doppler_offset = 3000.0;
    let (x, y) = (rand_frame(&mut r), rand_frame(&mut r));
    let (a, b) = (0.3, -2.0);
    let mix = IqFrame::new(
        x.i.iter().zip(&y.i).map(|(p, q)| a * p + b * q).collect(),
        x.q.iter().zip(&y.q).map(|(p, q)| a * p + b * q).collect(),
    )
    .unwrap();
    let (px, py, pm) = (propagate(&x, &h, &p, &spec), propagate(&y, &h, &p, &spec), propagate(&mix, &h, &p, &spec));
    for t in 0..512 {
        assert!((pm.i[t] - (a * px.i[t] + b * py.i[t])).abs() < 1e-10);
        assert!((pm.q[t] - (a * px.q[t] + b * py.q[t])).abs() < 1e-10);
    }
}

#[test]
fn measured_snr_matches_request() {
    let spec = FrameSpec::default();
    let p = &builtin_profiles()["default"];
    let clean = make_preamble(&spec).unwrap();
    let quiet = p.with_ebn0(f64::INFINITY);
    let mut r = rng(5);
    let (mut sig, mut noise, mut count) = (0.0, 0.0, 0usize);
    while count < 1_000_000 {
        let h = realize(p, &spec, &mut r);
        let y0 = propagate(&clean, &h, &quiet, &spec);
        let y = propagate(&clean, &h, p, &spec);
        sig += y0.energy();
        noise += y.i.iter().zip(&y0.i).chain(y.q.iter().zip(&y0.q)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += y.len();
    }
    let measured = 10.0 * (sig / noise).log10();
    let requested = 10.0 + 10.0 * (250e3f64 / 40e6).log10();
    assert!((measured - requested).abs() < 0.1, "{measured} vs {requested}");
}

#[test]
fn realization_is_deterministic_per_stream() {
    let spec = FrameSpec::default();
    let p = &builtin_profiles()["indoor_b"];
    let a = realize(p, &spec, &mut rng(9));
    let b = realize(p, &spec, &mut rng(9));
    assert_eq!(a, b);
    assert!(a.doppler_offset.abs() <= 10.0);
    assert_eq!(a.tap_samples, vec![0, 4, 8, 12, 20, 28]);
}

#[test]
fn propagate_gradient_matches_finite_differences() {
    let spec = FrameSpec::default();
    let p = ChannelProfile::vehicular_a().with_ebn0(-5.0);
    let mut r = rng(6);
    let mut reals: Vec<_> = (0..2).map(|_| realize(&ChannelProfile::indoor_b(), &spec, &mut r)).collect();
    reals[1].doppler_offset = 2.5e5;
    let n = 64;
    let x = Tensor::new(&[2, 2, n], (0..4 * n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let w = Tensor::new(&[2, 2, n], (0..4 * n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let res = check_input(&x, 1e-6, |v| {
        let y = propagate_var(v, &reals, &p, &spec).unwrap();
        Ok(y.mul(v.graph().constant(w.clone()))?.sum())
    })
    .unwrap();
    assert!(res.rel_error() < 1e-5, "{}", res.rel_error());

    // tensor path and frame path agree
    let g = rffsb_nn::Graph::new();
    let y = propagate_var(g.constant(x.clone()), &reals, &p, &spec).unwrap().value();
    let f = IqFrame::from_rails(&x.data()[2 * n..]);
    let want = propagate(&f, &reals[1], &p, &spec);
    let got = IqFrame::from_rails(&y.data()[2 * n..]);
    for t in 0..n {
        assert!((got.i[t] - want.i[t]).abs() < 1e-12 && (got.q[t] - want.q[t]).abs() < 1e-12);
    }
}
