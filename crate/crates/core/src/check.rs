//! The acceptance suite run by `rffsb check`.
//!
//! Criteria 1 to 4 are exact properties checked on random inputs. Criteria
//! 5 to 9 run the full pipeline at the configured scale and compare the
//! resulting report against fixed thresholds. Nothing here reads the clock
//! except [`run_check`], which keeps timings apart from the results so
//! repeated runs produce identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rffsb_nn::gradcheck::{check_input, check_params, GradCheck};
use rffsb_nn::layers::{BatchNorm1d, Conv1d, ConvTranspose1d, Ctx, Dense};
use rffsb_nn::ops::conv_out_len;
use rffsb_nn::{Graph, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::artifacts;
use crate::attack::{build_dataset, train_attack, train_classifier, AttackArtifacts, ScenarioConfig};
use crate::channel::{builtin_profiles, propagate, propagate_var, realize, ChannelProfile, ChannelRealization};
use crate::clps::{clps_var, ClpsExtractor};
use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::error::{CoreError, Result};
use crate::eval::{self, EvalReport, MeanAsr, SweepSeries};
use crate::features::{rms_normalize_var, FeatureKind};
use crate::models::{total_loss, BnUpdates, Classifier, ClassifierConfig, LossWeights, Vae, VaeConfig};
use crate::seed::{derive_seed, Stream};
use crate::signal::{impair_var, make_preamble, sample_device_fleet, FrameSpec, IqFrame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CriterionResult {
    fn new(id: u8, name: &str, passed: bool, detail: String) -> Self {
        CriterionResult {
            id,
            name: name.into(),
            passed,
            detail,
        }
    }

    /// One line for terminals and logs.
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} [{}] {}: {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_frame(rng: &mut impl Rng, n: usize) -> IqFrame {
    IqFrame {
        i: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        q: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

/// Scale invariance, zero mean and single-tap channel invariance of CLPS.
pub fn clps_invariants(frames: usize, spec: &FrameSpec, feature_len: usize, seed: u64) -> Result<CriterionResult> {
    const TOL: f64 = 1e-9;
    let ext = ClpsExtractor::new(spec.samples_per_frame, feature_len)?;
    let quiet = ChannelProfile::awgn().with_ebn0(f64::INFINITY);
    let rows = rffsb_nn::par::map_range(frames, |k| -> Result<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Check, k as u64));
        let f = random_frame(&mut rng, spec.samples_per_frame);
        let base = ext.extract(&f)?.bins;
        let mean = (base.iter().sum::<f64>() / base.len() as f64).abs();
        let mut scale = 0.0f64;
        for alpha in [1e-3, 1.0, 1e3] {
            scale = scale.max(max_abs_diff(&ext.extract(&f.scaled(alpha))?.bins, &base));
        }
        let h = Complex64::from_polar(rng.random_range(0.1..10.0), rng.random_range(0.0..std::f64::consts::TAU));
        let rx = propagate(&f, &ChannelRealization::fixed(&[h]), &quiet, spec);
        let flat = max_abs_diff(&ext.extract(&rx)?.bins, &base);
        Ok([scale, mean, flat])
    });
    let mut worst = [0.0f64; 3];
    for r in rows {
        let r = r?;
        for k in 0..3 {
            worst[k] = worst[k].max(r[k]);
        }
    }
    Ok(CriterionResult::new(
        1,
        "CLPS invariants",
        worst.iter().all(|w| *w < TOL),
        format!(
            "{frames} frames: scale {:.2e}, mean {:.2e}, flat channel {:.2e} (tol {TOL:.0e})",
            worst[0], worst[1], worst[2]
        ),
    ))
}

fn weighted_sum<'g>(y: Var<'g, f64>, rng: &mut ChaCha8Rng) -> rffsb_nn::Result<Var<'g, f64>> {
    let w = Tensor::new(&y.shape(), (0..y.numel()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    Ok(y.mul(y.graph().constant(w))?.sum())
}

struct LayerStack {
    conv: Conv1d,
    bn: BatchNorm1d,
    convt: ConvTranspose1d,
    dense: Dense,
    flat: usize,
    wseed: u64,
}

impl LayerStack {
    fn forward<'g>(&self, ctx: &Ctx<'g, '_, f64>, x: Var<'g, f64>) -> rffsb_nn::Result<Var<'g, f64>> {
        let mut wr = ChaCha8Rng::seed_from_u64(self.wseed);
        let h = self.conv.forward(ctx, x)?;
        let (h, _) = self.bn.forward(ctx, h)?;
        let d = self.dense.forward(ctx, h.reshape(&[h.shape()[0], self.flat])?.relu())?;
        let t = self.convt.forward(ctx, h)?;
        weighted_sum(d, &mut wr)?.add(weighted_sum(t, &mut wr)?)
    }
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// Finite-difference checks of every differentiable operation on small
/// randomized shapes, in f64.
pub fn gradient_suite(seed: u64) -> Result<CriterionResult> {
    const TOL: f64 = 1e-4;
    const H: f64 = 1e-6;
    let mut cases: Vec<(String, GradCheck)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Check, 1 << 20));

    for trial in 0..3 {
        let (b, cin, cout, len) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4), rng.random_range(6..12));
        let (k, stride) = ([1, 3, 5][rng.random_range(0..3)], rng.random_range(1..3));
        let pad = k / 2;
        let mut store = ParamStore::<f64>::new();
        let conv = Conv1d::new(&mut store, "conv", cin, cout, k, stride, pad, &mut rng);
        let lout = conv_out_len(len, k, stride, pad).ok_or_else(|| CoreError::config("gradient case too short"))?;
        let bn = BatchNorm1d::new(&mut store, "bn", cout);
        let convt = ConvTranspose1d::new(&mut store, "convt", cout, cin, k, stride, pad, 0, &mut rng);
        let dense = Dense::new(&mut store, "dense", cout * lout, 3, &mut rng);
        for id in [conv.bias, convt.bias, dense.bias, bn.beta] {
            let n = store.value(id).numel();
            *store.value_mut(id) = rand_t(&mut rng, &[n]);
        }
        let x = rand_t(&mut rng, &[b.max(2), cin, len]);
        let net = LayerStack {
            conv,
            bn,
            convt,
            dense,
            flat: cout * lout,
            wseed: rng.random(),
        };
        let ids = store.trainable_ids();
        cases.push((
            format!("layers#{trial} params"),
            check_params(&store, &ids, H, 16, |g, s| net.forward(&Ctx::new(g, s), g.constant(x.clone())))?,
        ));
        cases.push((
            format!("layers#{trial} input"),
            check_input(&x, H, |xv| net.forward(&Ctx::new(xv.graph(), &store), xv))?,
        ));
    }

    let spec = FrameSpec::default();
    let fleet = sample_device_fleet(4, seed)?;
    let n = 48;
    let x = rand_t(&mut rng, &[2, 2, n]);
    let wseed: u64 = rng.random();
    let dev = fleet[1];
    cases.push((
        "impairment".into(),
        check_input(&x, H, |v| weighted_sum(impair_var(v, &dev).map_err(to_nn)?, &mut ChaCha8Rng::seed_from_u64(wseed)))?,
    ));
    let profile = builtin_profiles()["indoor_b"].with_ebn0(0.0);
    let mut reals: Vec<_> = (0..2).map(|_| realize(&profile, &spec, &mut rng)).collect();
    reals[1].doppler_offset = 1.5e5;
    cases.push((
        "propagate".into(),
        check_input(&x, H, |v| {
            weighted_sum(propagate_var(v, &reals, &profile, &spec).map_err(to_nn)?, &mut ChaCha8Rng::seed_from_u64(wseed))
        })?,
    ));
    let ext = ClpsExtractor::new(n, 16)?;
    cases.push((
        "clps".into(),
        check_input(&x, H, |v| weighted_sum(clps_var(v, &ext).map_err(to_nn)?, &mut ChaCha8Rng::seed_from_u64(wseed)))?,
    ));
    cases.push((
        "rms normalization".into(),
        check_input(&x, H, |v| weighted_sum(rms_normalize_var(v).map_err(to_nn)?, &mut ChaCha8Rng::seed_from_u64(wseed)))?,
    ));

    let vae = Vae::<f64>::new(
        VaeConfig {
            input_len: 32,
            widths: vec![3, 4],
            latent: 4,
            head_init_scale: 1.0,
            ..Default::default()
        },
        seed,
    )?;
    let eps = rand_t(&mut rng, &[2, 4]);
    let x = rand_t(&mut rng, &[2, 2, 32]);
    cases.push((
        "vae".into(),
        check_params(&vae.store, &vae.store.trainable_ids(), H, 8, |g, s| {
            let out = vae.forward(&Ctx::new(g, s), g.constant(x.clone()), &eps).map_err(to_nn)?;
            let mut wr = ChaCha8Rng::seed_from_u64(wseed);
            weighted_sum(out.recon, &mut wr)?.add(weighted_sum(out.mu, &mut wr)?)?.add(weighted_sum(out.logvar, &mut wr)?)
        })?,
    ));
    let cls = Classifier::<f64>::new(
        ClassifierConfig {
            input_len: 16,
            n_classes: 3,
            widths: vec![3, 4],
            ..Default::default()
        },
        seed,
    )?;
    let feat = rand_t(&mut rng, &[3, 1, 16]);
    cases.push((
        "classifier".into(),
        check_params(&cls.store, &cls.store.trainable_ids(), H, 8, |g, s| {
            let logits = cls.forward(&Ctx::new(g, s), g.constant(feat.clone()), &mut BnUpdates::new()).map_err(to_nn)?;
            weighted_sum(logits, &mut ChaCha8Rng::seed_from_u64(wseed))
        })?,
    ));

    let (worst_name, worst) = cases
        .iter()
        .map(|(n, c)| (n.as_str(), c.rel_error()))
        .fold(("", 0.0), |a, b| if b.1 > a.1 || b.1.is_nan() { b } else { a });
    let silent: Vec<&str> = cases
        .iter()
        .filter(|(_, c)| c.analytic.iter().all(|v| v.abs() < 1e-12))
        .map(|(n, _)| n.as_str())
        .collect();
    let passed = worst < TOL && silent.is_empty();
    let mut detail = format!("{} cases, worst relative error {worst:.2e} ({worst_name}), tol {TOL:.0e}", cases.len());
    if !silent.is_empty() {
        detail.push_str(&format!("; zero gradient in {}", silent.join(", ")));
    }
    Ok(CriterionResult::new(2, "gradient suite", passed, detail))
}

fn to_nn(e: CoreError) -> rffsb_nn::NnError {
    match e {
        CoreError::Nn(e) => e,
        other => rffsb_nn::NnError::Config { op: "check", detail: other.to_string() },
    }
}

/// Measured SNR against the request, Rician power split and per-tap powers.
pub fn channel_calibration(samples: usize, draws: usize, seed: u64) -> Result<CriterionResult> {
    let spec = FrameSpec::default();
    let profiles = builtin_profiles();
    let p = &profiles["default"];
    let clean = make_preamble(&spec)?;
    let quiet = p.with_ebn0(f64::INFINITY);
    let frames = samples.div_ceil(spec.samples_per_frame);
    let parts = rffsb_nn::par::map_range(frames, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Check, (2 << 20) + k as u64));
        let h = realize(p, &spec, &mut rng);
        let y0 = propagate(&clean, &h, &quiet, &spec);
        let y = propagate(&clean, &h, p, &spec);
        let noise: f64 = y.i.iter().zip(&y0.i).chain(y.q.iter().zip(&y0.q)).map(|(a, b)| (a - b).powi(2)).sum();
        (y0.energy(), noise)
    });
    let (sig, noise) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let measured = 10.0 * (sig / noise).log10();
    let requested = p.snr_db(&spec);
    let snr_err = (measured - requested).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Check, 3 << 20));
    let mut split_err = 0.0f64;
    for k in [1.0, 5.0, 10.0] {
        let pk = p.with_k(k);
        let p0 = pk.tap_powers()[0];
        let (mut los, mut scat) = (0.0, 0.0);
        for _ in 0..draws {
            let h = realize(&pk, &spec, &mut rng);
            los += h.los.norm_sqr();
            scat += (h.paths[0] - h.los).norm_sqr();
        }
        let n = draws as f64;
        split_err = split_err
            .max((los / n / (p0 * k / (k + 1.0)) - 1.0).abs())
            .max((scat / n / (p0 / (k + 1.0)) - 1.0).abs());
    }
    let mut tap_err = 0.0f64;
    for name in ["indoor_a", "indoor_b", "vehicular_a"] {
        let pr = &profiles[name];
        let mut acc = vec![0.0; pr.tap_gains_db.len()];
        for _ in 0..draws {
            for (a, c) in acc.iter_mut().zip(&realize(pr, &spec, &mut rng).paths) {
                *a += c.norm_sqr();
            }
        }
        for (a, w) in acc.iter().zip(pr.tap_powers()) {
            tap_err = tap_err.max((10.0 * (a / draws as f64 / w).log10()).abs());
        }
    }
    let measured_samples = frames * spec.samples_per_frame;
    Ok(CriterionResult::new(
        3,
        "channel calibration",
        snr_err < 0.1 && split_err < 0.02 && tap_err < 0.15,
        format!(
            "SNR {measured:.3} dB vs {requested:.3} dB over {measured_samples} samples (|err| {snr_err:.3} < 0.1); \
             K split {:.2}% (< 2%); tap power {tap_err:.3} dB (< 0.15) over {draws} draws",
            100.0 * split_err
        ),
    ))
}

/// The combined loss against a scalar recomputation, plus the uniform-logits anchor.
pub fn loss_oracle(cases: usize, seed: u64) -> Result<CriterionResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Check, 4 << 20));
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let b = rng.random_range(1..5);
        let (n, l, f, c) = (rng.random_range(2..24), rng.random_range(1..8), rng.random_range(2..12), rng.random_range(2..11));
        let w = LossWeights {
            recon: rng.random_range(0.0..3.0),
            kl: rng.random_range(0.0..1.0),
            clps: rng.random_range(0.0..2.0),
            cls: rng.random_range(0.0..1.0),
        };
        let t: Vec<Tensor<f64>> = [[b, 2 * n], [b, 2 * n], [b, l], [b, l], [b, f], [b, f], [b, c]]
            .iter()
            .map(|s| rand_t(&mut rng, s))
            .collect();
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        let g = Graph::new();
        let v: Vec<Var<'_, f64>> = t.iter().map(|x| g.constant(x.clone())).collect();
        let got = total_loss(v[0], v[1], v[2], v[3], v[4], v[5], v[6], &labels, &w)?.total.item();

        let d = |k: usize| t[k].data();
        let mse = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
        let kl = d(2).iter().zip(d(3)).map(|(m, s)| -0.5 * (1.0 + s - m * m - s.exp())).sum::<f64>() / b as f64;
        let ce = (0..b)
            .map(|r| {
                let z = &d(6)[r * c..(r + 1) * c];
                let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
                lse - z[labels[r]]
            })
            .sum::<f64>()
            / b as f64;
        let want = w.recon * mse(d(0), d(1)) + w.kl * kl + w.clps * mse(d(4), d(5)) + w.cls * ce;
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    let g = Graph::new();
    let x = g.constant(rand_t(&mut rng, &[1, 32]));
    let feat = g.constant(rand_t(&mut rng, &[1, 16]));
    let zeros = g.constant(Tensor::zeros(&[1, 8]));
    let logits = g.constant(Tensor::full(&[1, 10], 0.3));
    let anchor = total_loss(x, x, zeros, zeros, feat, feat, logits, &[3], &LossWeights::default())?.total.item();
    let anchor_err = (anchor - 0.5 * 10f64.ln()).abs();
    Ok(CriterionResult::new(
        4,
        "loss oracle",
        worst < 1e-6 && anchor_err < 1e-9,
        format!("{cases} cases, worst error {worst:.2e} (< 1e-6); anchor error {anchor_err:.2e} (< 1e-9)"),
    ))
}

/// Outcome of a full acceptance run.
pub struct CheckRun {
    pub criteria: Vec<CriterionResult>,
    pub report: EvalReport,
    /// Wall-clock seconds per phase; never part of the report.
    pub timings: BTreeMap<String, f64>,
}

impl CheckRun {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }
}

fn series<'a>(s: &'a [SweepSeries], profile: &str) -> Option<&'a SweepSeries> {
    s.iter().find(|x| x.profile == profile)
}

fn at(s: &SweepSeries, v: f64) -> Option<f64> {
    s.points.iter().find(|p| p.value == v).map(|p| p.result.mean_asr)
}

fn per_target(m: &MeanAsr) -> String {
    m.per_target
        .iter()
        .map(|(t, c)| format!("{t}: {:.3}", c.asr))
        .collect::<Vec<_>>()
        .join(", ")
}

fn train_artifacts(cfg: &ScenarioConfig, data: &Dataset) -> Result<AttackArtifacts> {
    let classifier = train_classifier(data, &cfg.classifier_config()?, &cfg.classifier_train, cfg.master_seed)?;
    let mut attacks = BTreeMap::new();
    for t in cfg.resolved_targets() {
        attacks.insert(t, train_attack(&classifier.model, cfg, t)?);
    }
    Ok(AttackArtifacts {
        train_profile: cfg.train_profile.clone(),
        classifier,
        attacks,
    })
}

fn evaluate_pipeline(run: &RunConfig, timings: &mut BTreeMap<String, f64>) -> Result<(Vec<CriterionResult>, EvalReport)> {
    let cfg = &run.scenario;
    let sw = &run.sweep;
    let out = &run.out_dir;
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.into(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };
    let mut criteria = Vec::new();

    let data = build_dataset(cfg)?;
    lap("dataset", timings);
    let classifier = train_classifier(&data, &cfg.classifier_config()?, &cfg.classifier_train, cfg.master_seed)?;
    let acc = classifier.confusion.accuracy();
    criteria.push(CriterionResult::new(
        5,
        "classifier accuracy",
        acc >= 0.90,
        format!(
            "{} devices, {}/{} frames per device on `{}`: test accuracy {acc:.3} (>= 0.90)",
            cfg.n_legit, cfg.train_frames, cfg.test_frames, cfg.train_profile
        ),
    ));
    lap("classifier", timings);

    let mut attacks = BTreeMap::new();
    for t in cfg.resolved_targets() {
        attacks.insert(t, train_attack(&classifier.model, cfg, t)?);
    }
    let art = AttackArtifacts {
        train_profile: cfg.train_profile.clone(),
        classifier,
        attacks,
    };
    artifacts::save_artifacts(out, &art)?;
    lap("attack", timings);

    let (mut report, banks) = eval::evaluate(&art, cfg)?;
    let matched = report.matched_asr.clone();
    criteria.push(match &matched {
        Some(m) => CriterionResult::new(
            6,
            "matched-channel attack",
            m.per_target.values().all(|c| c.asr >= 0.90),
            format!("receiver ASR on `{}` per target {{{}}} (each >= 0.90)", cfg.test_profile, per_target(m)),
        ),
        None => CriterionResult::new(6, "matched-channel attack", false, "no spoofed frames were scored".into()),
    });
    lap("evaluate", timings);

    // Raw-I/Q ablation: same frames, no CLPS in the classifier or the attack loss.
    let raw_cfg = ScenarioConfig {
        feature: FeatureKind::RawIq,
        ..cfg.clone()
    };
    let ext = raw_cfg.extractor()?;
    let raw_data = Dataset {
        spec: crate::dataset::DatasetSpec {
            feature: FeatureKind::RawIq,
            ..data.spec.clone()
        },
        train: data.train.refeaturize(&ext)?,
        test: data.test.refeaturize(&ext)?,
    };
    drop(data);
    let raw_art = train_artifacts(&raw_cfg, &raw_data)?;
    drop(raw_data);
    let (raw_report, _) = eval::evaluate(&raw_art, &raw_cfg)?;
    let raw_acc = raw_art.classifier.confusion.accuracy();
    criteria.push(match &raw_report.matched_asr {
        Some(m) => CriterionResult::new(
            7,
            "raw I/Q ablation",
            m.per_target.values().all(|c| c.asr < 0.20),
            format!(
                "raw I/Q classifier accuracy {raw_acc:.3}; receiver ASR per target {{{}}} (each < 0.20)",
                per_target(m)
            ),
        ),
        None => CriterionResult::new(7, "raw I/Q ablation", false, "no spoofed frames were scored".into()),
    });
    report.extra.insert(
        "raw_iq_ablation".into(),
        serde_json::json!({
            "classifier_accuracy": raw_acc,
            "matched_asr": raw_report.matched_asr,
            "targets": raw_report.targets,
        }),
    );
    lap("raw_iq_ablation", timings);

    let model = &art.classifier.model;
    report.sweep_ebn0 = eval::sweep_ebn0(model, &banks, &sw.ebn0_profiles, &sw.ebn0_db, cfg)?;
    if let Some(floor) = sw.ebn0_floor_db {
        let floor_series = eval::sweep_ebn0(model, &banks, &sw.ebn0_profiles, &[floor], cfg)?;
        report.extra.insert("ebn0_floor".into(), serde_json::to_value(&floor_series).expect("serializes"));
        for s in &floor_series {
            if let Some(p) = s.points.first() {
                let prior = 1.0 / cfg.n_legit as f64;
                log::info!(
                    "Eb/N0 {floor} dB on `{}`: mean ASR {:.3} (prior {prior:.3}, within 0.15: {})",
                    s.profile,
                    p.result.mean_asr,
                    (p.result.mean_asr - prior).abs() <= 0.15
                );
            }
        }
    }
    criteria.push(match series(&report.sweep_ebn0, "indoor_a") {
        Some(s) => {
            let rho = s.spearman;
            let top = at(s, 30.0);
            CriterionResult::new(
                8,
                "Eb/N0 trend",
                rho.is_some_and(|r| r >= 0.8) && top.is_some_and(|a| a >= 0.95),
                format!(
                    "indoor_a: ASR {{{}}}; Spearman rho {} (>= 0.8), ASR at 30 dB {} (>= 0.95)",
                    s.points.iter().map(|p| format!("{}: {:.3}", p.value, p.result.mean_asr)).collect::<Vec<_>>().join(", "),
                    rho.map_or("undefined".into(), |r| format!("{r:.3}")),
                    top.map_or("missing".into(), |a| format!("{a:.3}"))
                ),
            )
        }
        None => CriterionResult::new(8, "Eb/N0 trend", false, "indoor_a is not in the sweep".into()),
    });
    lap("sweep_ebn0", timings);

    report.sweep_k = eval::sweep_kfactor(model, &banks, &sw.k_profiles, &sw.k_factors, cfg)?;
    let delta = |name: &str| -> Option<(f64, f64)> {
        let s = series(&report.sweep_k, name)?;
        Some((at(s, 0.0)?, at(s, 10.0)?))
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, stable) in [("indoor_a", true), ("indoor_b", false), ("vehicular_a", false)] {
        match delta(name) {
            Some((k0, k10)) => {
                let pass = if stable { (k0 - k10).abs() <= 0.10 } else { k10 - k0 >= 0.30 };
                ok &= pass;
                parts.push(format!(
                    "{name} K=0 {k0:.3}, K=10 {k10:.3} ({})",
                    if stable { "|diff| <= 0.10" } else { "gain >= 0.30" }
                ));
            }
            None => {
                ok = false;
                parts.push(format!("{name} missing K=0 or K=10"));
            }
        }
    }
    criteria.push(CriterionResult::new(9, "K-factor signatures", ok, parts.join("; ")));
    lap("sweep_k", timings);

    let mut by_train = BTreeMap::new();
    by_train.insert(cfg.train_profile.clone(), (art, banks));
    report.cross_channel = eval::cross_channel_matrix(&by_train, std::slice::from_ref(&cfg.train_profile), &sw.test_profiles, cfg)?;
    lap("cross_channel", timings);
    Ok((criteria, report))
}

/// Runs every criterion, writes `report/` (report, tables, `check.json`),
/// `timings.json` and the trained artifacts under `run.out_dir`.
pub fn run_check(run: &RunConfig) -> Result<CheckRun> {
    let out = &run.out_dir;
    fs::create_dir_all(out).map_err(|e| CoreError::io(out, e))?;
    run.write_resolved(out)?;
    let seed = run.scenario.master_seed;
    let mut timings = BTreeMap::new();
    let mut criteria = Vec::new();
    let exact: [(&str, Box<dyn Fn() -> Result<CriterionResult>>); 4] = [
        ("clps_invariants", Box::new(|| clps_invariants(1000, &run.scenario.frame, run.scenario.feature_len, seed))),
        ("gradient_suite", Box::new(|| gradient_suite(seed))),
        ("channel_calibration", Box::new(|| channel_calibration(1_000_000, 100_000, seed))),
        ("loss_oracle", Box::new(|| loss_oracle(100, seed))),
    ];
    for (name, f) in exact {
        let t = Instant::now();
        let r = f()?;
        log::info!("{}", r.line());
        criteria.push(r);
        timings.insert(name.to_string(), t.elapsed().as_secs_f64());
    }
    let (pipeline, mut report) = evaluate_pipeline(run, &mut timings)?;
    for r in &pipeline {
        log::info!("{}", r.line());
    }
    criteria.extend(pipeline);
    report.extra.insert("criteria".into(), serde_json::to_value(&criteria).expect("serializes"));

    let dir = out.join("report");
    eval::emit_report(&report, &dir)?;
    let write_json = |p: &Path, v: &serde_json::Value| -> Result<()> {
        let mut b = serde_json::to_vec_pretty(v).expect("serializes");
        b.push(b'\n');
        fs::write(p, b).map_err(|e| CoreError::io(p, e))
    };
    write_json(&dir.join("check.json"), &serde_json::to_value(&criteria).expect("serializes"))?;
    write_json(&out.join("timings.json"), &serde_json::to_value(&timings).expect("serializes"))?;
    Ok(CheckRun {
        criteria,
        report,
        timings,
    })
}
