//! Block-fading tapped-delay-line channels with a Rician first tap, a
//! per-frame Doppler offset and AWGN calibrated from Eb/N0.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rffsb_nn::{Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::signal::{FrameSpec, IqFrame};

/// Serializes non-finite floats as `"inf"`/`"-inf"` so profiles survive JSON.
pub(crate) mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number or \"inf\", got {other:?}"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelProfile {
    pub name: String,
    pub tap_delays_ns: Vec<f64>,
    pub tap_gains_db: Vec<f64>,
    /// Rician K of the first tap; `inf` means a pure line-of-sight tap.
    #[serde(with = "extended_f64")]
    pub k_factor: f64,
    pub max_doppler_hz: f64,
    /// `inf` disables noise.
    #[serde(with = "extended_f64")]
    pub ebn0_db: f64,
    pub bit_rate: f64,
}

pub const DEFAULT_PROFILE: &str = "default";

impl ChannelProfile {
    fn rician(name: &str, delays: &[f64], gains: &[f64]) -> Self {
        ChannelProfile {
            name: name.to_string(),
            tap_delays_ns: delays.to_vec(),
            tap_gains_db: gains.to_vec(),
            k_factor: 5.0,
            max_doppler_hz: 10.0,
            ebn0_db: 10.0,
            bit_rate: 250e3,
        }
    }

    pub fn awgn() -> Self {
        ChannelProfile {
            k_factor: f64::INFINITY,
            max_doppler_hz: 0.0,
            ..Self::rician("awgn", &[0.0], &[0.0])
        }
    }

    /// ITU-R M.1225 indoor office, channel A.
    pub fn indoor_a() -> Self {
        Self::rician(
            "indoor_a",
            &[0.0, 50.0, 110.0, 170.0, 290.0, 310.0],
            &[0.0, -3.0, -10.0, -18.0, -26.0, -32.0],
        )
    }

    /// ITU-R M.1225 indoor office, channel B.
    pub fn indoor_b() -> Self {
        Self::rician(
            "indoor_b",
            &[0.0, 100.0, 200.0, 300.0, 500.0, 700.0],
            &[0.0, -3.6, -7.2, -10.8, -18.0, -25.2],
        )
    }

    /// ITU-R M.1225 vehicular, channel A.
    pub fn vehicular_a() -> Self {
        Self::rician(
            "vehicular_a",
            &[0.0, 310.0, 710.0, 1090.0, 1730.0, 2510.0],
            &[0.0, -1.0, -9.0, -10.0, -15.0, -20.0],
        )
    }

    pub fn with_ebn0(&self, ebn0_db: f64) -> Self {
        ChannelProfile {
            ebn0_db,
            ..self.clone()
        }
    }

    pub fn with_k(&self, k_factor: f64) -> Self {
        ChannelProfile {
            k_factor,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CoreError::config(format!("channel `{}`: {m}", self.name)));
        if self.tap_delays_ns.is_empty() {
            return err("no taps".into());
        }
        if self.tap_delays_ns.len() != self.tap_gains_db.len() {
            return err(format!(
                "{} delays but {} gains",
                self.tap_delays_ns.len(),
                self.tap_gains_db.len()
            ));
        }
        if self.tap_delays_ns[0] != 0.0 {
            return err("first tap delay must be 0 ns".into());
        }
        if self.tap_delays_ns.windows(2).any(|w| !(w[1] > w[0])) {
            return err("tap delays must be strictly increasing".into());
        }
        if self.tap_gains_db.iter().any(|g| !g.is_finite()) {
            return err("tap gains must be finite".into());
        }
        if !(self.k_factor >= 0.0) {
            return err(format!("k_factor {} must be >= 0", self.k_factor));
        }
        if !(self.max_doppler_hz >= 0.0 && self.max_doppler_hz.is_finite()) {
            return err(format!("max_doppler_hz {} must be >= 0", self.max_doppler_hz));
        }
        if self.ebn0_db.is_nan() || self.ebn0_db == f64::NEG_INFINITY {
            return err("ebn0_db must be a number or inf".into());
        }
        if !(self.bit_rate > 0.0 && self.bit_rate.is_finite()) {
            return err("bit_rate must be positive".into());
        }
        Ok(())
    }

    /// Linear tap powers normalized to unit sum.
    pub fn tap_powers(&self) -> Vec<f64> {
        let lin: Vec<f64> = self.tap_gains_db.iter().map(|g| 10f64.powf(g / 10.0)).collect();
        let total: f64 = lin.iter().sum();
        lin.into_iter().map(|p| p / total).collect()
    }

    /// Nearest-sample index of every tap.
    pub fn tap_samples(&self, spec: &FrameSpec) -> Vec<usize> {
        let ns_per_sample = 1e9 / spec.sample_rate();
        self.tap_delays_ns
            .iter()
            .map(|d| (d / ns_per_sample).round() as usize)
            .collect()
    }

    /// Per-sample SNR in dB corresponding to `ebn0_db`.
    pub fn snr_db(&self, spec: &FrameSpec) -> f64 {
        self.ebn0_db + 10.0 * (self.bit_rate / spec.sample_rate()).log10()
    }
}

/// Named built-in profiles. `default` is indoor office A with the training
/// defaults (K = 5, 10 Hz Doppler, Eb/N0 = 10 dB).
pub fn builtin_profiles() -> BTreeMap<String, ChannelProfile> {
    let mut m = BTreeMap::new();
    for p in [
        ChannelProfile::awgn(),
        ChannelProfile::indoor_a(),
        ChannelProfile::indoor_b(),
        ChannelProfile::vehicular_a(),
    ] {
        m.insert(p.name.clone(), p);
    }
    m.insert(
        DEFAULT_PROFILE.to_string(),
        ChannelProfile {
            name: DEFAULT_PROFILE.to_string(),
            ..ChannelProfile::indoor_a()
        },
    );
    m
}

/// One block-fading draw, fixed for a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Coefficient of every profile path before co-located taps are merged.
    pub paths: Vec<Complex64>,
    /// Line-of-sight part of the first path.
    pub los: Complex64,
    /// Sample delay of each entry of `taps`, strictly increasing.
    pub tap_samples: Vec<usize>,
    /// One coefficient per resolvable sample delay.
    pub taps: Vec<Complex64>,
    pub doppler_offset: f64,
    pub noise_seed: u64,
}

impl ChannelRealization {
    /// Noiseless, Doppler-free channel with the given sample-spaced taps.
    pub fn fixed(taps: &[Complex64]) -> Self {
        ChannelRealization {
            paths: taps.to_vec(),
            los: Complex64::new(0.0, 0.0),
            tap_samples: (0..taps.len()).collect(),
            taps: taps.to_vec(),
            doppler_offset: 0.0,
            noise_seed: 0,
        }
    }
}

fn cn<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Draws a realization. The stream is consumed identically for every
/// profile shape so downstream draws stay aligned.
pub fn realize<R: Rng + ?Sized>(
    profile: &ChannelProfile,
    spec: &FrameSpec,
    rng: &mut R,
) -> ChannelRealization {
    let powers = profile.tap_powers();
    let theta = rng.random_range(0.0..2.0 * PI);
    let k = profile.k_factor;
    let (los_frac, nlos_frac) = if k.is_infinite() {
        (1.0, 0.0)
    } else {
        (k / (k + 1.0), 1.0 / (k + 1.0))
    };
    let los = Complex64::from_polar((powers[0] * los_frac).sqrt(), theta);
    let scatter0 = cn(rng, powers[0] * nlos_frac);
    let mut paths = Vec::with_capacity(powers.len());
    paths.push(if nlos_frac == 0.0 { los } else { los + scatter0 });
    for &p in &powers[1..] {
        paths.push(cn(rng, p));
    }
    let fd = profile.max_doppler_hz;
    let u: f64 = rng.random_range(-1.0..=1.0);
    let doppler_offset = u * fd;
    let noise_seed: u64 = rng.random();

    let mut tap_samples: Vec<usize> = Vec::new();
    let mut taps: Vec<Complex64> = Vec::new();
    for (d, c) in profile.tap_samples(spec).into_iter().zip(&paths) {
        if tap_samples.last() == Some(&d) {
            log::debug!("channel `{}`: merging paths at sample delay {d}", profile.name);
            *taps.last_mut().expect("non-empty") += c;
        } else {
            tap_samples.push(d);
            taps.push(*c);
        }
    }
    ChannelRealization {
        paths,
        los,
        tap_samples,
        taps,
        doppler_offset,
        noise_seed,
    }
}

/// Unit-variance complex Gaussian noise draw of a realization.
pub fn noise_draw(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut re = Vec::with_capacity(n);
    let mut im = Vec::with_capacity(n);
    for _ in 0..n {
        re.push(rng.sample::<f64, _>(StandardNormal));
        im.push(rng.sample::<f64, _>(StandardNormal));
    }
    (re, im)
}

/// Truncated linear convolution with the taps followed by the Doppler rotation.
fn fade(i: &[f64], q: &[f64], real: &ChannelRealization, spec: &FrameSpec) -> (Vec<f64>, Vec<f64>) {
    let n = i.len();
    let mut yi = vec![0.0; n];
    let mut yq = vec![0.0; n];
    for (&d, h) in real.tap_samples.iter().zip(&real.taps) {
        for t in d..n {
            let (xi, xq) = (i[t - d], q[t - d]);
            yi[t] += h.re * xi - h.im * xq;
            yq[t] += h.re * xq + h.im * xi;
        }
    }
    if real.doppler_offset != 0.0 {
        let w = 2.0 * PI * real.doppler_offset / spec.sample_rate();
        for t in 0..n {
            let (s, c) = (w * t as f64).sin_cos();
            let (a, b) = (yi[t], yq[t]);
            yi[t] = a * c - b * s;
            yq[t] = a * s + b * c;
        }
    }
    (yi, yq)
}

/// Adjoint of [`fade`].
fn fade_adjoint(gi: &[f64], gq: &[f64], real: &ChannelRealization, spec: &FrameSpec) -> (Vec<f64>, Vec<f64>) {
    let n = gi.len();
    let (mut ui, mut uq) = (gi.to_vec(), gq.to_vec());
    if real.doppler_offset != 0.0 {
        let w = 2.0 * PI * real.doppler_offset / spec.sample_rate();
        for t in 0..n {
            let (s, c) = (w * t as f64).sin_cos();
            let (a, b) = (ui[t], uq[t]);
            ui[t] = a * c + b * s;
            uq[t] = -a * s + b * c;
        }
    }
    let mut xi = vec![0.0; n];
    let mut xq = vec![0.0; n];
    for (&d, h) in real.tap_samples.iter().zip(&real.taps) {
        for t in d..n {
            let (a, b) = (ui[t], uq[t]);
            xi[t - d] += h.re * a + h.im * b;
            xq[t - d] += h.re * b - h.im * a;
        }
    }
    (xi, xq)
}

/// Noise standard deviation per real component, or `None` when noiseless.
fn noise_scale(profile: &ChannelProfile, spec: &FrameSpec) -> Option<f64> {
    if profile.ebn0_db.is_infinite() {
        return None;
    }
    let snr = 10f64.powf(profile.snr_db(spec) / 10.0);
    Some((1.0 / (2.0 * snr)).sqrt())
}

/// `y = (x * h) e^{j 2 pi f_D t} + n`, with the noise variance set relative to
/// the noiseless received power.
pub fn propagate(
    frame: &IqFrame,
    real: &ChannelRealization,
    profile: &ChannelProfile,
    spec: &FrameSpec,
) -> IqFrame {
    let (mut yi, mut yq) = fade(&frame.i, &frame.q, real, spec);
    if let Some(c) = noise_scale(profile, spec) {
        let p = (yi.iter().chain(&yq).map(|v| v * v).sum::<f64>()) / yi.len().max(1) as f64;
        let sigma = c * p.sqrt();
        let (wi, wq) = noise_draw(real.noise_seed, yi.len());
        for t in 0..yi.len() {
            yi[t] += sigma * wi[t];
            yq[t] += sigma * wq[t];
        }
    }
    IqFrame { i: yi, q: yq }
}

/// [`propagate`] on a `[B, 2, N]` tensor with one realization per batch row.
/// The noise draw is fixed but its scale follows the signal power, and that
/// dependence is differentiated too.
pub fn propagate_var<'g, T: Real>(
    x: Var<'g, T>,
    reals: &[ChannelRealization],
    profile: &ChannelProfile,
    spec: &FrameSpec,
) -> Result<Var<'g, T>> {
    let shape = x.shape();
    if shape.len() != 3 || shape[1] != 2 || shape[0] != reals.len() {
        return Err(CoreError::config(format!(
            "propagate expects [{}, 2, samples], got {shape:?}",
            reals.len()
        )));
    }
    let n = shape[2];
    let xv = x.value();
    let c = noise_scale(profile, spec);
    struct Row {
        yi: Vec<f64>,
        yq: Vec<f64>,
        noise: Option<(f64, Vec<f64>, Vec<f64>)>,
    }
    let rows: Vec<Row> = rffsb_nn::par::map_range(reals.len(), |b| {
        let rail = &xv.data()[b * 2 * n..(b + 1) * 2 * n];
        let i: Vec<f64> = rail[..n].iter().map(|v| v.to_f64().unwrap_or(0.0)).collect();
        let q: Vec<f64> = rail[n..].iter().map(|v| v.to_f64().unwrap_or(0.0)).collect();
        let (yi, yq) = fade(&i, &q, &reals[b], spec);
        let noise = c.map(|c| {
            let p = yi.iter().chain(&yq).map(|v| v * v).sum::<f64>() / n as f64;
            let (wi, wq) = noise_draw(reals[b].noise_seed, n);
            (c * p.sqrt(), wi, wq)
        });
        Row { yi, yq, noise }
    });
    let mut out = Vec::with_capacity(xv.numel());
    for r in &rows {
        match &r.noise {
            Some((sigma, wi, wq)) => {
                out.extend(r.yi.iter().zip(wi).map(|(y, w)| T::of(y + sigma * w)));
                out.extend(r.yq.iter().zip(wq).map(|(y, w)| T::of(y + sigma * w)));
            }
            None => {
                out.extend(r.yi.iter().map(|&v| T::of(v)));
                out.extend(r.yq.iter().map(|&v| T::of(v)));
            }
        }
    }
    let reals = reals.to_vec();
    let spec = *spec;
    let y = Tensor::new(&shape, out)?;
    Ok(x.graph().record(y, &[x], move |g| {
        let grads: Vec<Vec<T>> = rffsb_nn::par::map_range(reals.len(), |b| {
            let gr = &g[b * 2 * n..(b + 1) * 2 * n];
            let mut gi: Vec<f64> = gr[..n].iter().map(|v| v.to_f64().unwrap_or(0.0)).collect();
            let mut gq: Vec<f64> = gr[n..].iter().map(|v| v.to_f64().unwrap_or(0.0)).collect();
            let r = &rows[b];
            if let Some((sigma, wi, wq)) = &r.noise {
                if *sigma > 0.0 {
                    // d sigma / d y0 = sigma * y0 / (N p)
                    let gw: f64 = gi.iter().zip(wi).chain(gq.iter().zip(wq)).map(|(a, b)| a * b).sum();
                    let p = r.yi.iter().chain(&r.yq).map(|v| v * v).sum::<f64>() / n as f64;
                    let k = gw * sigma / (n as f64 * p);
                    for t in 0..n {
                        gi[t] += k * r.yi[t];
                        gq[t] += k * r.yq[t];
                    }
                }
            }
            let (xi, xq) = fade_adjoint(&gi, &gq, &reals[b], &spec);
            xi.into_iter().chain(xq).map(T::of).collect()
        });
        vec![Some(grads.concat())]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_profiles_validate() {
        let spec = FrameSpec::default();
        for (name, p) in builtin_profiles() {
            p.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!((p.tap_powers().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let d = &builtin_profiles()[DEFAULT_PROFILE];
        assert_eq!(d.tap_samples(&spec), vec![0, 2, 4, 7, 12, 12]);
        assert!((d.snr_db(&spec) - (10.0 - 10.0 * 160f64.log10())).abs() < 1e-12);
    }

    #[test]
    fn profile_json_round_trip_keeps_infinity() {
        let p = ChannelProfile::awgn().with_ebn0(f64::INFINITY);
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"inf\""));
        let back: ChannelProfile = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn invalid_profiles_are_rejected() {
        let mut p = ChannelProfile::indoor_a();
        p.tap_delays_ns[2] = 40.0;
        assert!(p.validate().is_err());
        let mut p = ChannelProfile::indoor_a();
        p.tap_gains_db.pop();
        assert!(p.validate().is_err());
        assert!(ChannelProfile::indoor_a().with_k(-1.0).validate().is_err());
    }
}
