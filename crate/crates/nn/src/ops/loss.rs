use crate::error::{NnError, Result};
use crate::graph::Var;
use crate::real::Real;
use crate::tensor::Tensor;

use super::{expect_dim, expect_rank};

/// Row-wise softmax of `[B, C]` logits (not recorded on the tape).
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Vec<Vec<T>> {
    let c = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks(c)
        .map(|row| {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
            let s = e.iter().copied().sum::<T>();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn softmax_cross_entropy<'g, T: Real>(
    logits: Var<'g, T>,
    labels: &[usize],
) -> Result<Var<'g, T>> {
    let s = logits.shape();
    expect_rank("softmax_cross_entropy", &s, 2)?;
    let (batch, classes) = (s[0], s[1]);
    expect_dim("softmax_cross_entropy", "batch", batch, labels.len())?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(NnError::Shape {
            op: "softmax_cross_entropy",
            axis: "label",
            expected: classes,
            got: bad,
        });
    }
    let lv = logits.value();
    let mut loss = T::zero();
    let mut probs = Vec::with_capacity(batch * classes);
    for (row, &label) in lv.data().chunks(classes).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z = row.iter().map(|&v| (v - m).exp()).sum::<T>();
        let lse = m + z.ln();
        loss += lse - row[label];
        probs.extend(row.iter().map(|&v| (v - lse).exp()));
    }
    let inv_b = T::one() / T::of(batch as f64);
    let labels = labels.to_vec();
    Ok(logits
        .graph()
        .record(Tensor::scalar(loss * inv_b), &[logits], move |g| {
            let scale = g[0] * inv_b;
            let mut gl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
            for (b, &l) in labels.iter().enumerate() {
                gl[b * classes + l] -= scale;
            }
            vec![Some(gl)]
        }))
}

/// Mean squared error over all elements.
pub fn mse<'g, T: Real>(a: Var<'g, T>, b: Var<'g, T>) -> Result<Var<'g, T>> {
    expect_dim("mse", "elements", a.numel(), b.numel())?;
    let (av, bv) = (a.value(), b.value());
    let n = av.numel();
    let inv = T::one() / T::of(n as f64);
    let diff: Vec<T> = av.data().iter().zip(bv.data()).map(|(x, y)| *x - *y).collect();
    let loss = diff.iter().map(|d| *d * *d).sum::<T>() * inv;
    Ok(a.graph().record(Tensor::scalar(loss), &[a, b], move |g| {
        let k = g[0] * inv * T::of(2.0);
        let ga: Vec<T> = diff.iter().map(|d| *d * k).collect();
        let gb = ga.iter().map(|v| -*v).collect();
        vec![Some(ga), Some(gb)]
    }))
}

/// `-0.5 * sum(1 + logvar - mu^2 - exp(logvar))`, summed over latent dims and
/// averaged over the batch (first axis).
pub fn kl_standard_normal<'g, T: Real>(mu: Var<'g, T>, logvar: Var<'g, T>) -> Result<Var<'g, T>> {
    let s = mu.shape();
    expect_dim("kl_standard_normal", "latent", mu.numel(), logvar.numel())?;
    let batch = if s.len() >= 2 { s[0] } else { 1 };
    let (mv, lv) = (mu.value(), logvar.value());
    let half = T::of(0.5);
    let inv_b = T::one() / T::of(batch as f64);
    let kl = mv
        .data()
        .iter()
        .zip(lv.data())
        .map(|(&m, &l)| T::one() + l - m * m - l.exp())
        .sum::<T>()
        * (-half)
        * inv_b;
    Ok(mu.graph().record(Tensor::scalar(kl), &[mu, logvar], move |g| {
        let k = g[0] * inv_b;
        let gm = mv.data().iter().map(|&m| m * k).collect();
        let gl = lv.data().iter().map(|&l| (l.exp() - T::one()) * half * k).collect();
        vec![Some(gm), Some(gl)]
    }))
}

/// Reparameterized draw `mean + exp(0.5 * logvar) * eps`; `eps` is a constant.
pub fn gaussian_sample<'g, T: Real>(
    mean: Var<'g, T>,
    logvar: Var<'g, T>,
    eps: &Tensor<T>,
) -> Result<Var<'g, T>> {
    expect_dim("gaussian_sample", "latent", mean.numel(), logvar.numel())?;
    expect_dim("gaussian_sample", "latent", mean.numel(), eps.numel())?;
    let (mv, lv) = (mean.value(), logvar.value());
    let half = T::of(0.5);
    let sigma_eps: Vec<T> = lv
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&l, &e)| (l * half).exp() * e)
        .collect();
    let z = mv.data().iter().zip(&sigma_eps).map(|(m, s)| *m + *s).collect();
    let t = Tensor::new(mv.shape(), z)?;
    Ok(mean.graph().record(t, &[mean, logvar], move |g| {
        let gl = g.iter().zip(&sigma_eps).map(|(g, s)| *g * *s * half).collect();
        vec![Some(g.to_vec()), Some(gl)]
    }))
}
