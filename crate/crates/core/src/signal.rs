//! Baseband preamble synthesis and transmitter IQ imbalance.

use std::f64::consts::PI;

use rand::Rng;
use rffsb_nn::{Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::seed::{rng_for, Stream};

/// Chip sequence of the zero data symbol of the 2.4 GHz O-QPSK PHY.
pub const ZERO_SYMBOL_CHIPS: [u8; 32] = [
    1, 1, 0, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 1, 1, 0, 1, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 1, 0,
];
/// The synchronization header preamble is eight zero symbols.
pub const PREAMBLE_SYMBOLS: usize = 8;
pub const PREAMBLE_CHIPS: usize = PREAMBLE_SYMBOLS * ZERO_SYMBOL_CHIPS.len();

pub const MAX_GAIN_IMBALANCE: f64 = 0.3;
pub const MAX_PHASE_IMBALANCE_DEG: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    pub samples_per_frame: usize,
    pub chip_rate: f64,
    pub oversample: usize,
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec {
            samples_per_frame: 5120,
            chip_rate: 2.0e6,
            oversample: 20,
        }
    }
}

impl FrameSpec {
    pub fn sample_rate(&self) -> f64 {
        self.chip_rate * self.oversample as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.oversample == 0 {
            return Err(CoreError::config("frame.oversample must be at least 1"));
        }
        if !(self.chip_rate > 0.0 && self.chip_rate.is_finite()) {
            return Err(CoreError::config("frame.chip_rate must be positive"));
        }
        if PREAMBLE_CHIPS * self.oversample != self.samples_per_frame {
            return Err(CoreError::config(format!(
                "frame.samples_per_frame = {} but the preamble has {} chips x {} samples/chip = {}",
                self.samples_per_frame,
                PREAMBLE_CHIPS,
                self.oversample,
                PREAMBLE_CHIPS * self.oversample
            )));
        }
        Ok(())
    }
}

/// Complex baseband frame stored as separate I and Q rails.
#[derive(Debug, Clone, PartialEq)]
pub struct IqFrame {
    pub i: Vec<f64>,
    pub q: Vec<f64>,
}

impl IqFrame {
    pub fn zeros(n: usize) -> Self {
        IqFrame {
            i: vec![0.0; n],
            q: vec![0.0; n],
        }
    }

    pub fn new(i: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if i.len() != q.len() {
            return Err(CoreError::config(format!(
                "I rail has {} samples but Q rail has {}",
                i.len(),
                q.len()
            )));
        }
        if i.iter().chain(&q).any(|v| !v.is_finite()) {
            return Err(CoreError::config("frame contains non-finite samples"));
        }
        Ok(IqFrame { i, q })
    }

    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.i.iter().chain(&self.q).map(|v| v * v).sum()
    }

    pub fn mean_power(&self) -> f64 {
        self.energy() / self.len().max(1) as f64
    }

    pub fn scaled(&self, a: f64) -> Self {
        IqFrame {
            i: self.i.iter().map(|v| v * a).collect(),
            q: self.q.iter().map(|v| v * a).collect(),
        }
    }

    /// `[I..., Q...]`, the row layout of a `[2, N]` tensor.
    pub fn to_rails<T: Real>(&self) -> Vec<T> {
        self.i.iter().chain(&self.q).map(|&v| T::of(v)).collect()
    }

    pub fn from_rails<T: Real>(rails: &[T]) -> Self {
        let n = rails.len() / 2;
        IqFrame {
            i: rails[..n].iter().map(|v| v.to_f64().unwrap_or(0.0)).collect(),
            q: rails[n..2 * n].iter().map(|v| v.to_f64().unwrap_or(0.0)).collect(),
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(&[2, self.len()], self.to_rails()).expect("rails match shape")
    }
}

/// Half-sine chip pulse spanning two chip periods.
fn half_sine(n: usize, oversample: usize) -> f64 {
    (PI * n as f64 / (2 * oversample) as f64).sin()
}

/// Preamble chips mapped to antipodal levels.
pub fn preamble_chips() -> Vec<f64> {
    (0..PREAMBLE_SYMBOLS)
        .flat_map(|_| ZERO_SYMBOL_CHIPS.iter())
        .map(|&c| if c == 1 { 1.0 } else { -1.0 })
        .collect()
}

/// O-QPSK half-sine preamble: even chips on I, odd chips on Q delayed by
/// one chip period. The tail of the final Q pulse falls outside the frame.
pub fn make_preamble(spec: &FrameSpec) -> Result<IqFrame> {
    spec.validate()?;
    let os = spec.oversample;
    let n = spec.samples_per_frame;
    let pulse: Vec<f64> = (0..2 * os).map(|k| half_sine(k, os)).collect();
    let mut frame = IqFrame::zeros(n);
    for (c, &level) in preamble_chips().iter().enumerate() {
        let (rail, start) = if c % 2 == 0 {
            (&mut frame.i, c * os)
        } else {
            (&mut frame.q, c * os)
        };
        for (k, p) in pulse.iter().enumerate() {
            if let Some(s) = rail.get_mut(start + k) {
                *s += level * p;
            }
        }
    }
    Ok(frame)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub device_id: u32,
    pub gain_imbalance: f64,
    /// Radians.
    pub phase_imbalance: f64,
}

impl DeviceProfile {
    pub fn new(device_id: u32, gain_imbalance: f64, phase_imbalance: f64) -> Result<Self> {
        let max_phase = MAX_PHASE_IMBALANCE_DEG.to_radians();
        if !(gain_imbalance.abs() <= MAX_GAIN_IMBALANCE) {
            return Err(CoreError::config(format!(
                "device {device_id}: gain imbalance {gain_imbalance} outside [-0.3, 0.3]"
            )));
        }
        if !(phase_imbalance.abs() <= max_phase + 1e-15) {
            return Err(CoreError::config(format!(
                "device {device_id}: phase imbalance {} deg outside [-15, 15]",
                phase_imbalance.to_degrees()
            )));
        }
        Ok(DeviceProfile {
            device_id,
            gain_imbalance,
            phase_imbalance,
        })
    }

    /// Coefficients of the real map `[I', Q'] = [[a, 0], [c, d]] [I, Q]`.
    pub fn matrix(&self) -> (f64, f64, f64) {
        let (s, c) = self.phase_imbalance.sin_cos();
        (1.0 + self.gain_imbalance, s, c)
    }
}

/// `I' = (1 + g) I`, `Q' = Q cos(phi) + I sin(phi)`.
pub fn apply_impairment(frame: &IqFrame, dev: &DeviceProfile) -> IqFrame {
    let (a, s, c) = dev.matrix();
    IqFrame {
        i: frame.i.iter().map(|&v| a * v).collect(),
        q: frame.q.iter().zip(&frame.i).map(|(&q, &i)| q * c + i * s).collect(),
    }
}

/// [`apply_impairment`] on a `[B, 2, N]` tensor, recorded on the tape.
pub fn impair_var<'g, T: Real>(x: Var<'g, T>, dev: &DeviceProfile) -> Result<Var<'g, T>> {
    let shape = x.shape();
    if shape.len() != 3 || shape[1] != 2 {
        return Err(CoreError::config(format!(
            "impairment expects a [batch, 2, samples] tensor, got {shape:?}"
        )));
    }
    let n = shape[2];
    let (a, s, c) = dev.matrix();
    let (a, s, c) = (T::of(a), T::of(s), T::of(c));
    let xv = x.value();
    let mut out = xv.data().to_vec();
    for frame in out.chunks_mut(2 * n) {
        let (i, q) = frame.split_at_mut(n);
        for (iv, qv) in i.iter_mut().zip(q.iter_mut()) {
            let i0 = *iv;
            *iv = a * i0;
            *qv = *qv * c + i0 * s;
        }
    }
    let y = Tensor::new(&shape, out)?;
    Ok(x.graph().record(y, &[x], move |g| {
        let mut gx = g.to_vec();
        for frame in gx.chunks_mut(2 * n) {
            let (gi, gq) = frame.split_at_mut(n);
            for (gi, gq) in gi.iter_mut().zip(gq.iter_mut()) {
                let (yi, yq) = (*gi, *gq);
                *gi = a * yi + s * yq;
                *gq = c * yq;
            }
        }
        vec![Some(gx)]
    }))
}

/// `n_legit` legitimate devices followed by the attacker (id `n_legit`),
/// with parameters uniform over the allowed ranges.
pub fn sample_device_fleet(n_legit: usize, seed: u64) -> Result<Vec<DeviceProfile>> {
    if n_legit < 2 {
        return Err(CoreError::config("fleet needs at least two legitimate devices"));
    }
    let max_phase = MAX_PHASE_IMBALANCE_DEG.to_radians();
    let mut rng = rng_for(seed, Stream::Fleet, 0);
    let mut fleet: Vec<DeviceProfile> = Vec::with_capacity(n_legit + 1);
    while fleet.len() <= n_legit {
        let g = rng.random_range(-MAX_GAIN_IMBALANCE..=MAX_GAIN_IMBALANCE);
        let p = rng.random_range(-max_phase..=max_phase);
        let clash = fleet
            .iter()
            .any(|d| (d.gain_imbalance - g).abs() < 1e-6 && (d.phase_imbalance - p).abs() < 1e-6);
        if !clash {
            fleet.push(DeviceProfile::new(fleet.len() as u32, g, p)?);
        }
    }
    Ok(fleet)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_mismatch_is_config_error() {
        let spec = FrameSpec {
            samples_per_frame: 5000,
            ..Default::default()
        };
        assert!(matches!(make_preamble(&spec), Err(CoreError::Config(_))));
        assert_eq!(FrameSpec::default().sample_rate(), 40.0e6);
    }

    #[test]
    fn pure_gain_case() {
        let f = IqFrame::new(vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        let d = DeviceProfile::new(0, 0.3, 0.0).unwrap();
        let y = apply_impairment(&f, &d);
        assert_eq!(y.i, vec![1.3, 0.0]);
        assert_eq!(y.q, vec![0.0, 1.0]);
    }

    #[test]
    fn ranges_are_enforced() {
        assert!(DeviceProfile::new(0, 0.31, 0.0).is_err());
        assert!(DeviceProfile::new(0, 0.0, 16f64.to_radians()).is_err());
        assert!(DeviceProfile::new(0, -0.3, -15f64.to_radians()).is_ok());
    }
}
