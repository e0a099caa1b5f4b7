use rffsb_nn::ops;
use rffsb_nn::{Real, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub recon: f64,
    pub kl: f64,
    pub clps: f64,
    pub cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            recon: 2.0,
            kl: 0.1,
            clps: 1.0,
            cls: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("recon", self.recon), ("kl", self.kl), ("clps", self.clps), ("cls", self.cls)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CoreError::config(format!("loss weight `{name}` = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Unweighted terms and the weighted total.
pub struct LossTerms<'g, T: Real> {
    pub recon: Var<'g, T>,
    pub kl: Var<'g, T>,
    pub clps: Var<'g, T>,
    pub cls: Var<'g, T>,
    pub total: Var<'g, T>,
}

impl<T: Real> LossTerms<'_, T> {
    pub fn values(&self) -> [f64; 5] {
        [self.recon, self.kl, self.clps, self.cls, self.total].map(|v| v.item().to_f64().unwrap_or(f64::NAN))
    }
}

/// `w.recon * MSE(recon, input) + w.kl * KL(mu, logvar) + w.clps * MSE(clps_recon,
/// clps_target) + w.cls * CE(logits, target)`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<'g, T: Real>(
    recon: Var<'g, T>,
    input: Var<'g, T>,
    mu: Var<'g, T>,
    logvar: Var<'g, T>,
    clps_recon: Var<'g, T>,
    clps_target: Var<'g, T>,
    logits: Var<'g, T>,
    target: &[usize],
    w: &LossWeights,
) -> Result<LossTerms<'g, T>> {
    w.validate()?;
    let recon = ops::mse(recon, input)?;
    let kl = ops::kl_standard_normal(mu, logvar)?;
    let clps = ops::mse(clps_recon, clps_target)?;
    let cls = ops::softmax_cross_entropy(logits, target)?;
    let total = recon
        .scale(T::of(w.recon))
        .add(kl.scale(T::of(w.kl)))?
        .add(clps.scale(T::of(w.clps)))?
        .add(cls.scale(T::of(w.cls)))?;
    Ok(LossTerms {
        recon,
        kl,
        clps,
        cls,
        total,
    })
}
