//! The legitimate receiver's classifier, the attacker's VAE and the attack loss.

mod classifier;
mod loss;
mod vae;

pub use classifier::{Classifier, ClassifierConfig};
pub use loss::{total_loss, LossTerms, LossWeights};
pub use vae::{Vae, VaeConfig, VaeOutput};

use rffsb_nn::layers::BatchNorm1d;
use rffsb_nn::ops::BatchStats;

/// Batch statistics produced by one training-mode forward pass, to be folded
/// into the running averages once the step is taken.
pub struct BnUpdates<T> {
    pending: Vec<(BatchNorm1d, BatchStats<T>)>,
}

impl<T: rffsb_nn::Real> BnUpdates<T> {
    pub fn new() -> Self {
        BnUpdates { pending: Vec::new() }
    }

    fn push(&mut self, bn: &BatchNorm1d, stats: Option<BatchStats<T>>) {
        if let Some(s) = stats {
            self.pending.push((bn.clone(), s));
        }
    }

    pub fn apply(self, store: &mut rffsb_nn::ParamStore<T>) {
        for (bn, s) in &self.pending {
            bn.update_running(store, s);
        }
    }
}

impl<T: rffsb_nn::Real> Default for BnUpdates<T> {
    fn default() -> Self {
        Self::new()
    }
}
