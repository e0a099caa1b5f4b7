//! Differentiable operations.
//!
//! Every op computes its value eagerly and records a closure that maps the
//! output gradient to gradients of its parents.

mod conv;
mod elementwise;
mod linear;
mod loss;
mod norm;

pub use conv::{conv1d, conv1d_transpose, conv_out_len, conv_transpose_out_len};
pub use elementwise::concat;
pub use linear::dense;
pub use loss::{gaussian_sample, kl_standard_normal, mse, softmax, softmax_cross_entropy};
pub use norm::{batch_norm_train, channel_affine, BatchStats};

use crate::error::{NnError, Result};

pub(crate) fn expect_rank(op: &'static str, shape: &[usize], rank: usize) -> Result<()> {
    if shape.len() != rank {
        return Err(NnError::Rank {
            op,
            expected: rank,
            got: shape.to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn expect_dim(
    op: &'static str,
    axis: &'static str,
    expected: usize,
    got: usize,
) -> Result<()> {
    if expected != got {
        return Err(NnError::Shape {
            op,
            axis,
            expected,
            got,
        });
    }
    Ok(())
}
