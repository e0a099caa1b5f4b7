//! Centralized logarithmic power spectrum (CLPS).
//!
//! The biased autocorrelation of the received frame is transformed, squared
//! in magnitude, taken to log10, mean-centered, shifted so DC sits in the
//! middle and block-averaged down to `feature_len` bins. Centering removes
//! any flat channel gain, which is what makes the feature channel resistant.

use std::f64::consts::LN_10;
use std::sync::Arc;

use num_complex::Complex64;
use rffsb_nn::{Real, Tensor, Var};
use rustfft::{Fft, FftPlanner};

use crate::error::{CoreError, Result};
use crate::signal::IqFrame;

/// The log floor is `LOG_FLOOR_REL * max(P)`. Keeping it relative to the
/// spectrum peak makes the feature exactly invariant to signal scale.
pub const LOG_FLOOR_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ClpsFeature {
    pub bins: Vec<f64>,
    /// Set for an all-zero frame; `bins` are then all zero.
    pub degenerate: bool,
}

impl ClpsFeature {
    pub fn feature_len(&self) -> usize {
        self.bins.len()
    }
}

/// How the autocorrelation treats the frame boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AcfMode {
    /// Zero-extended frame, lags `-(N-1)..=N-1`, FFT size `nextpow2(2N-1)`.
    #[default]
    Linear,
    /// Periodically extended frame, `N` lags, FFT size `N`. Invariant to
    /// circular shifts of the frame.
    Circular,
}

/// Precomputed FFT plans for one `(frame length, feature length)` pair.
#[derive(Clone)]
pub struct ClpsExtractor {
    mode: AcfMode,
    n: usize,
    feature_len: usize,
    fft_len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ClpsExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClpsExtractor")
            .field("n", &self.n)
            .field("feature_len", &self.feature_len)
            .field("fft_len", &self.fft_len)
            .finish()
    }
}

/// Everything the backward pass needs from one forward evaluation.
struct Saved {
    x: Vec<Complex64>,
    p: Vec<f64>,
    floor: f64,
    argmax: usize,
}

impl ClpsExtractor {
    pub fn new(n: usize, feature_len: usize) -> Result<Self> {
        Self::with_mode(n, feature_len, AcfMode::Linear)
    }

    pub fn with_mode(n: usize, feature_len: usize, mode: AcfMode) -> Result<Self> {
        if n < 2 {
            return Err(CoreError::config("CLPS needs frames of at least 2 samples"));
        }
        if feature_len == 0 || feature_len > n {
            return Err(CoreError::config(format!(
                "feature_len {feature_len} must be in 1..={n} (frame length)"
            )));
        }
        let fft_len = match mode {
            AcfMode::Linear => (2 * n - 1).next_power_of_two(),
            AcfMode::Circular => n,
        };
        if fft_len % feature_len != 0 {
            return Err(CoreError::config(format!(
                "feature_len {feature_len} must divide the FFT size {fft_len}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(ClpsExtractor {
            mode,
            n,
            feature_len,
            fft_len,
            fwd: planner.plan_fft_forward(fft_len),
            inv: planner.plan_fft_inverse(fft_len),
        })
    }

    pub fn frame_len(&self) -> usize {
        self.n
    }

    pub fn feature_len(&self) -> usize {
        self.feature_len
    }

    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    fn check(&self, frame: &IqFrame) -> Result<()> {
        if frame.len() != self.n {
            return Err(CoreError::config(format!(
                "CLPS extractor built for {} samples, got a frame of {}",
                self.n,
                frame.len()
            )));
        }
        Ok(())
    }

    fn padded_fft(&self, i: &[f64], q: &[f64]) -> Vec<Complex64> {
        let mut x = vec![Complex64::new(0.0, 0.0); self.fft_len];
        for (k, (re, im)) in i.iter().zip(q).enumerate() {
            x[k] = Complex64::new(*re, *im);
        }
        self.fwd.process(&mut x);
        x
    }

    /// Biased ACF from the frame spectrum. Linear mode returns lags
    /// `-(N-1)..=N-1`; circular mode returns lags `0..N`.
    fn acf_from_spectrum(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut c: Vec<Complex64> = x.iter().map(|v| Complex64::new(v.norm_sqr(), 0.0)).collect();
        self.inv.process(&mut c);
        let scale = 1.0 / (self.fft_len as f64 * n as f64);
        if self.mode == AcfMode::Circular {
            return c.into_iter().map(|v| v * scale).collect();
        }
        let mut acf = vec![Complex64::new(0.0, 0.0); 2 * n - 1];
        for m in 0..n {
            let v = c[m] * scale;
            acf[n - 1 + m] = v;
            acf[n - 1 - m] = v.conj();
        }
        acf[n - 1] = Complex64::new(acf[n - 1].re, 0.0);
        acf
    }

    /// `acf[m + N - 1] = (1/N) sum_n r[n] conj(r[n - m])` in linear mode.
    pub fn autocorrelate(&self, frame: &IqFrame) -> Result<Vec<Complex64>> {
        self.check(frame)?;
        Ok(self.acf_from_spectrum(&self.padded_fft(&frame.i, &frame.q)))
    }

    fn forward(&self, i: &[f64], q: &[f64]) -> (ClpsFeature, Saved) {
        let l = self.fft_len;
        let x = self.padded_fft(i, q);
        let acf = self.acf_from_spectrum(&x);
        let mut a = vec![Complex64::new(0.0, 0.0); l];
        a[..acf.len()].copy_from_slice(&acf);
        self.fwd.process(&mut a);
        let p: Vec<f64> = a.iter().map(|v| v.norm_sqr()).collect();
        let (argmax, peak) = p
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (k, &v)| if v > bv { (k, v) } else { (bi, bv) });
        let saved_zero = |x, p| Saved {
            x,
            p,
            floor: 0.0,
            argmax: 0,
        };
        if !(peak > 0.0) {
            return (
                ClpsFeature {
                    bins: vec![0.0; self.feature_len],
                    degenerate: true,
                },
                saved_zero(x, p),
            );
        }
        let floor = LOG_FLOOR_REL * peak;
        let mut lp: Vec<f64> = p.iter().map(|v| (v + floor).log10()).collect();
        center(&mut lp);
        let w = l / self.feature_len;
        let mut bins: Vec<f64> = (0..self.feature_len)
            .map(|j| (0..w).map(|t| lp[(j * w + t + l / 2) % l]).sum::<f64>() / w as f64)
            .collect();
        center(&mut bins);
        (
            ClpsFeature {
                bins,
                degenerate: false,
            },
            Saved { x, p, floor, argmax },
        )
    }

    pub fn extract(&self, frame: &IqFrame) -> Result<ClpsFeature> {
        self.check(frame)?;
        Ok(self.forward(&frame.i, &frame.q).0)
    }

    /// Vector-Jacobian product for one frame; returns `[dI..., dQ...]`.
    fn backward(&self, s: &Saved, g: &[f64]) -> Vec<f64> {
        let (n, l, f) = (self.n, self.fft_len, self.feature_len);
        if s.floor == 0.0 {
            return vec![0.0; 2 * n];
        }
        let gmean = g.iter().sum::<f64>() / f as f64;
        let w = l / f;
        let mut glp = vec![0.0; l];
        for (j, gj) in g.iter().enumerate() {
            let v = (gj - gmean) / w as f64;
            for t in 0..w {
                glp[(j * w + t + l / 2) % l] = v;
            }
        }
        center(&mut glp);
        let mut gp: Vec<f64> = glp
            .iter()
            .zip(&s.p)
            .map(|(g, p)| g / ((p + s.floor) * LN_10))
            .collect();
        let through_floor = LOG_FLOOR_REL * gp.iter().sum::<f64>();
        gp[s.argmax] += through_floor;
        // P_k = |X_k|^4 / N^2 with X the padded DFT of the frame.
        let inv_n2 = 1.0 / (n as f64 * n as f64);
        let mut gx: Vec<Complex64> = s
            .x
            .iter()
            .zip(&gp)
            .map(|(x, g)| x * (4.0 * g * x.norm_sqr() * inv_n2))
            .collect();
        self.inv.process(&mut gx);
        gx[..n].iter().map(|v| v.re).chain(gx[..n].iter().map(|v| v.im)).collect()
    }
}

fn center(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

pub fn autocorrelate(frame: &IqFrame) -> Result<Vec<Complex64>> {
    ClpsExtractor::new(frame.len(), 1)?.autocorrelate(frame)
}

pub fn extract_clps(frame: &IqFrame, feature_len: usize) -> Result<ClpsFeature> {
    ClpsExtractor::new(frame.len(), feature_len)?.extract(frame)
}

/// Differentiable CLPS of a `[B, 2, N]` batch, producing `[B, feature_len]`.
pub fn clps_var<'g, T: Real>(x: Var<'g, T>, ext: &ClpsExtractor) -> Result<Var<'g, T>> {
    let shape = x.shape();
    if shape.len() != 3 || shape[1] != 2 || shape[2] != ext.n {
        return Err(CoreError::config(format!(
            "CLPS expects [batch, 2, {}], got {shape:?}",
            ext.n
        )));
    }
    let (b, n, f) = (shape[0], ext.n, ext.feature_len);
    let xv = x.value();
    let rows: Vec<(ClpsFeature, Saved)> = rffsb_nn::par::map_range(b, |r| {
        let rail = &xv.data()[r * 2 * n..(r + 1) * 2 * n];
        let i: Vec<f64> = rail[..n].iter().map(|v| v.to_f64().unwrap_or(0.0)).collect();
        let q: Vec<f64> = rail[n..].iter().map(|v| v.to_f64().unwrap_or(0.0)).collect();
        ext.forward(&i, &q)
    });
    let out: Vec<T> = rows.iter().flat_map(|(c, _)| c.bins.iter().map(|&v| T::of(v))).collect();
    let saved: Vec<Saved> = rows.into_iter().map(|(_, s)| s).collect();
    let ext = ext.clone();
    Ok(x.graph().record(Tensor::new(&[b, f], out)?, &[x], move |g| {
        let grads: Vec<Vec<T>> = rffsb_nn::par::map_range(b, |r| {
            let gr: Vec<f64> = g[r * f..(r + 1) * f].iter().map(|v| v.to_f64().unwrap_or(0.0)).collect();
            ext.backward(&saved[r], &gr).into_iter().map(T::of).collect()
        });
        vec![Some(grads.concat())]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extractor_rejects_bad_lengths() {
        assert!(ClpsExtractor::new(1, 1).is_err());
        assert!(ClpsExtractor::new(64, 128).is_err());
        assert!(ClpsExtractor::new(64, 48).is_err());
        let e = ClpsExtractor::new(5120, 512).unwrap();
        assert_eq!(e.fft_len(), 16384);
    }

    #[test]
    fn impulse_acf() {
        let mut f = IqFrame::zeros(16);
        f.i[0] = 1.0;
        let acf = autocorrelate(&f).unwrap();
        for (k, v) in acf.iter().enumerate() {
            let want = if k == 15 { 1.0 / 16.0 } else { 0.0 };
            assert!((v - Complex64::new(want, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn all_zero_frame_is_degenerate() {
        let c = extract_clps(&IqFrame::zeros(64), 16).unwrap();
        assert!(c.degenerate);
        assert!(c.bins.iter().all(|&v| v == 0.0));
    }
}
