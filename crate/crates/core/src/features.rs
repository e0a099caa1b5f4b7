//! Classifier inputs: the CLPS fingerprint, or RMS-normalized raw I/Q for the
//! ablation that skips CLPS entirely.

use rffsb_nn::{Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::clps::ClpsExtractor;
use crate::error::{CoreError, Result};
use crate::signal::IqFrame;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    #[default]
    Clps,
    RawIq,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Clps => "clps",
            FeatureKind::RawIq => "raw_iq",
        }
    }
}

/// Maps received frames to classifier input rows of shape `[channels, len]`.
#[derive(Clone)]
pub enum Extractor {
    Clps(ClpsExtractor),
    RawIq { frame_len: usize },
}

impl Extractor {
    pub fn new(kind: FeatureKind, frame_len: usize, feature_len: usize) -> Result<Self> {
        match kind {
            FeatureKind::Clps => Ok(Extractor::Clps(ClpsExtractor::new(frame_len, feature_len)?)),
            FeatureKind::RawIq if frame_len >= 2 => Ok(Extractor::RawIq { frame_len }),
            FeatureKind::RawIq => Err(CoreError::config("raw I/Q features need at least 2 samples")),
        }
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            Extractor::Clps(_) => FeatureKind::Clps,
            Extractor::RawIq { .. } => FeatureKind::RawIq,
        }
    }

    pub fn frame_len(&self) -> usize {
        match self {
            Extractor::Clps(e) => e.frame_len(),
            Extractor::RawIq { frame_len } => *frame_len,
        }
    }

    /// `(channels, length)` of one feature row.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Extractor::Clps(e) => (1, e.feature_len()),
            Extractor::RawIq { frame_len } => (2, *frame_len),
        }
    }

    pub fn dim(&self) -> usize {
        let (c, l) = self.shape();
        c * l
    }

    /// Flattened feature row, channel-major.
    pub fn extract(&self, frame: &IqFrame) -> Result<Vec<f64>> {
        if frame.len() != self.frame_len() {
            return Err(CoreError::config(format!(
                "frame has {} samples, extractor expects {}",
                frame.len(),
                self.frame_len()
            )));
        }
        match self {
            Extractor::Clps(e) => Ok(e.extract(frame)?.bins),
            Extractor::RawIq { .. } => {
                let mut rails = frame.to_rails::<f64>();
                rms_normalize(&mut rails);
                Ok(rails)
            }
        }
    }

    /// Differentiable twin: `[B, 2, N]` received frames to `[B, channels, len]`.
    pub fn extract_var<'g, T: Real>(&self, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let (c, l) = self.shape();
        let b = x.shape()[0];
        match self {
            Extractor::Clps(e) => Ok(crate::clps::clps_var(x, e)?.reshape(&[b, c, l])?),
            Extractor::RawIq { .. } => rms_normalize_var(x),
        }
    }
}

/// Scales a row to unit mean-square. All-zero rows are left alone.
pub fn rms_normalize(row: &mut [f64]) {
    let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len().max(1) as f64;
    if ms > 0.0 {
        let r = ms.sqrt();
        row.iter_mut().for_each(|v| *v /= r);
    }
}

/// Per-row [`rms_normalize`] on `[B, ...]`.
pub fn rms_normalize_var<'g, T: Real>(x: Var<'g, T>) -> Result<Var<'g, T>> {
    let shape = x.shape();
    if shape.is_empty() || shape[0] == 0 {
        return Err(CoreError::config("rms normalization needs a batch axis"));
    }
    let b = shape[0];
    let m = x.numel() / b;
    let xv = x.value();
    let mut out = Vec::with_capacity(xv.numel());
    let mut inv = Vec::with_capacity(b);
    for row in xv.data().chunks(m) {
        let ms = row.iter().map(|v| v.to_f64().unwrap_or(0.0).powi(2)).sum::<f64>() / m as f64;
        let r = if ms > 0.0 { 1.0 / ms.sqrt() } else { 1.0 };
        inv.push(r);
        out.extend(row.iter().map(|v| T::of(v.to_f64().unwrap_or(0.0) * r)));
    }
    let y: Vec<f64> = out.iter().map(|v| v.to_f64().unwrap_or(0.0)).collect();
    let flat = ms_flags(xv.data(), m);
    Ok(x.graph().record(Tensor::new(&shape, out)?, &[x], move |g| {
        // d(x/r) = (g - y <g, y> / m) / r
        let mut gx = Vec::with_capacity(g.len());
        for (r, (gr, yr)) in g.chunks(m).zip(y.chunks(m)).enumerate() {
            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a.to_f64().unwrap_or(0.0) * b).sum::<f64>() / m as f64;
            let proj = if flat[r] { 0.0 } else { dot };
            gx.extend(gr.iter().zip(yr).map(|(a, b)| T::of((a.to_f64().unwrap_or(0.0) - b * proj) * inv[r])));
        }
        vec![Some(gx)]
    }))
}

fn ms_flags<T: Real>(data: &[T], m: usize) -> Vec<bool> {
    data.chunks(m).map(|row| row.iter().all(|v| v.to_f64() == Some(0.0))).collect()
}
