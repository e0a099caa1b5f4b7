use crate::error::Result;
use crate::graph::Var;
use crate::real::Real;
use crate::tensor::Tensor;

use super::{expect_dim, expect_rank};

/// Per-channel statistics of one training batch (biased variance).
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Batch normalization in training mode over `x[B, C, L]`.
pub fn batch_norm_train<'g, T: Real>(
    x: Var<'g, T>,
    gamma: Var<'g, T>,
    beta: Var<'g, T>,
    eps: T,
) -> Result<(Var<'g, T>, BatchStats<T>)> {
    let s = x.shape();
    expect_rank("batch_norm", &s, 3)?;
    let (batch, c, l) = (s[0], s[1], s[2]);
    expect_dim("batch_norm", "channels", c, gamma.numel())?;
    expect_dim("batch_norm", "channels", c, beta.numel())?;
    let n = T::of((batch * l) as f64);
    let (xv, gv, bv) = (x.value(), gamma.value(), beta.value());
    let idx = move |b: usize, ch: usize| (b * c + ch) * l;

    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut acc = T::zero();
        for b in 0..batch {
            acc += xv.data()[idx(b, ch)..idx(b, ch) + l].iter().copied().sum::<T>();
        }
        mean[ch] = acc / n;
        let mut acc2 = T::zero();
        for b in 0..batch {
            for &v in &xv.data()[idx(b, ch)..idx(b, ch) + l] {
                let d = v - mean[ch];
                acc2 += d * d;
            }
        }
        var[ch] = acc2 / n;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); xv.numel()];
    let mut out = vec![T::zero(); xv.numel()];
    for b in 0..batch {
        for ch in 0..c {
            let r = idx(b, ch)..idx(b, ch) + l;
            for ((h, o), &v) in xhat[r.clone()]
                .iter_mut()
                .zip(&mut out[r.clone()])
                .zip(&xv.data()[r])
            {
                *h = (v - mean[ch]) * inv_std[ch];
                *o = *h * gv.data()[ch] + bv.data()[ch];
            }
        }
    }
    let t = Tensor::new(&s, out)?;
    let stats = BatchStats {
        mean,
        var: var.clone(),
    };
    let y = x.graph().record(t, &[x, gamma, beta], move |g| {
        let mut gx = vec![T::zero(); g.len()];
        let mut ggamma = vec![T::zero(); c];
        let mut gbeta = vec![T::zero(); c];
        for ch in 0..c {
            let mut sum_g = T::zero();
            let mut sum_gh = T::zero();
            for b in 0..batch {
                let r = idx(b, ch)..idx(b, ch) + l;
                for (&gv_, &h) in g[r.clone()].iter().zip(&xhat[r]) {
                    sum_g += gv_;
                    sum_gh += gv_ * h;
                }
            }
            ggamma[ch] = sum_gh;
            gbeta[ch] = sum_g;
            let gam = gv.data()[ch];
            let k = gam * inv_std[ch] / n;
            for b in 0..batch {
                let r = idx(b, ch)..idx(b, ch) + l;
                for ((o, &gv_), &h) in gx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r]) {
                    *o = k * (n * gv_ - sum_g - h * sum_gh);
                }
            }
        }
        vec![Some(gx), Some(ggamma), Some(gbeta)]
    });
    Ok((y, stats))
}

/// Inference-mode normalization with fixed statistics:
/// `y = gamma * (x - mean) / sqrt(var + eps) + beta`.
pub fn channel_affine<'g, T: Real>(
    x: Var<'g, T>,
    gamma: Var<'g, T>,
    beta: Var<'g, T>,
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<Var<'g, T>> {
    let s = x.shape();
    expect_rank("channel_affine", &s, 3)?;
    let (c, l) = (s[1], s[2]);
    expect_dim("channel_affine", "channels", c, gamma.numel())?;
    expect_dim("channel_affine", "channels", c, beta.numel())?;
    expect_dim("channel_affine", "channels", c, mean.len())?;
    expect_dim("channel_affine", "channels", c, var.len())?;
    let (xv, gv, bv) = (x.value(), gamma.value(), beta.value());
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mean = mean.to_vec();
    let mut out = vec![T::zero(); xv.numel()];
    for (i, (o, x)) in out.chunks_mut(l).zip(xv.data().chunks(l)).enumerate() {
        let ch = i % c;
        let k = gv.data()[ch] * inv_std[ch];
        for (o, &v) in o.iter_mut().zip(x) {
            *o = (v - mean[ch]) * k + bv.data()[ch];
        }
    }
    let t = Tensor::new(&s, out)?;
    Ok(x.graph().record(t, &[x, gamma, beta], move |g| {
        let mut gx = vec![T::zero(); g.len()];
        let mut ggamma = vec![T::zero(); c];
        let mut gbeta = vec![T::zero(); c];
        for (i, (gr, xr)) in g.chunks(l).zip(xv.data().chunks(l)).enumerate() {
            let ch = i % c;
            let k = gv.data()[ch] * inv_std[ch];
            for ((o, &gg), &v) in gx[i * l..(i + 1) * l].iter_mut().zip(gr).zip(xr) {
                *o = gg * k;
                ggamma[ch] += gg * (v - mean[ch]) * inv_std[ch];
                gbeta[ch] += gg;
            }
        }
        vec![Some(gx), Some(ggamma), Some(gbeta)]
    }))
}
