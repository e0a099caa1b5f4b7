use crate::error::Result;
use crate::graph::Var;
use crate::linalg::{gemm, Mat};
use crate::real::Real;
use crate::tensor::Tensor;

use super::{expect_dim, expect_rank};

/// Fully connected layer `y = x W^T + b` with `x[B, in]`, `w[out, in]`, `b[out]`.
pub fn dense<'g, T: Real>(x: Var<'g, T>, w: Var<'g, T>, b: Var<'g, T>) -> Result<Var<'g, T>> {
    let (xs, ws) = (x.shape(), w.shape());
    expect_rank("dense", &xs, 2)?;
    expect_rank("dense", &ws, 2)?;
    let (batch, fin) = (xs[0], xs[1]);
    let fout = ws[0];
    expect_dim("dense", "in_features", ws[1], fin)?;
    expect_dim("dense", "out_features", fout, b.numel())?;

    let (xv, wv, bv) = (x.value(), w.value(), b.value());
    let mut out = Vec::with_capacity(batch * fout);
    for _ in 0..batch {
        out.extend_from_slice(bv.data());
    }
    gemm(
        T::one(),
        Mat::row_major(xv.data(), batch, fin),
        Mat::row_major(wv.data(), fout, fin).t(),
        T::one(),
        &mut out,
    );
    let t = Tensor::new(&[batch, fout], out)?;
    let need = (x.requires_grad(), w.requires_grad(), b.requires_grad());
    Ok(x.graph().record(t, &[x, w, b], move |g| {
        let gx = need.0.then(|| {
            let mut gx = vec![T::zero(); batch * fin];
            gemm(
                T::one(),
                Mat::row_major(g, batch, fout),
                Mat::row_major(wv.data(), fout, fin),
                T::zero(),
                &mut gx,
            );
            gx
        });
        let gw = need.1.then(|| {
            let mut gw = vec![T::zero(); fout * fin];
            gemm(
                T::one(),
                Mat::row_major(g, batch, fout).t(),
                Mat::row_major(xv.data(), batch, fin),
                T::zero(),
                &mut gw,
            );
            gw
        });
        let gb = need.2.then(|| {
            let mut gb = vec![T::zero(); fout];
            for row in g.chunks(fout) {
                gb.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
            }
            gb
        });
        vec![gx, gw, gb]
    }))
}
