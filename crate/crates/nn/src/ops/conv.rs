//! 1-D convolution and its transpose via im2col + GEMM, parallel over the batch.

use crate::error::{NnError, Result};
use crate::graph::Var;
use crate::linalg::{gemm, Mat};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

use super::{expect_dim, expect_rank};

/// Output length of a strided convolution, `None` if it would be empty.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output length of a transposed convolution, `None` if it would be empty.
pub fn conv_transpose_out_len(
    len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    if stride == 0 || kernel == 0 || len == 0 {
        return None;
    }
    let full = (len - 1) * stride + kernel + output_padding;
    full.checked_sub(2 * padding).filter(|&n| n > 0)
}

#[derive(Clone, Copy)]
struct Geometry {
    channels: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    positions: usize,
}

impl Geometry {
    /// `col[(c*K + k), t] = x[c, t*stride + k - padding]`.
    fn im2col<T: Real>(&self, x: &[T], col: &mut [T]) {
        let Geometry {
            channels,
            len,
            kernel,
            stride,
            padding,
            positions,
        } = *self;
        for c in 0..channels {
            let xrow = &x[c * len..(c + 1) * len];
            for k in 0..kernel {
                let row = &mut col[(c * kernel + k) * positions..(c * kernel + k + 1) * positions];
                for (t, v) in row.iter_mut().enumerate() {
                    let pos = (t * stride + k) as isize - padding as isize;
                    *v = if pos >= 0 && (pos as usize) < len {
                        xrow[pos as usize]
                    } else {
                        T::zero()
                    };
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatter-adds columns back into `x`.
    fn col2im<T: Real>(&self, col: &[T], x: &mut [T]) {
        let Geometry {
            channels,
            len,
            kernel,
            stride,
            padding,
            positions,
        } = *self;
        for c in 0..channels {
            let xrow = &mut x[c * len..(c + 1) * len];
            for k in 0..kernel {
                let row = &col[(c * kernel + k) * positions..(c * kernel + k + 1) * positions];
                for (t, v) in row.iter().enumerate() {
                    let pos = (t * stride + k) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < len {
                        xrow[pos as usize] += *v;
                    }
                }
            }
        }
    }
}

fn sum_in_order<T: Real>(parts: Vec<Vec<T>>, n: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); n];
    for p in parts {
        acc.iter_mut().zip(&p).for_each(|(a, b)| *a += *b);
    }
    acc
}

fn bias_grad<T: Real>(g: &[T], channels: usize, inner: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); channels];
    for (i, row) in g.chunks(inner).enumerate() {
        gb[i % channels] += row.iter().copied().sum::<T>();
    }
    gb
}

/// Cross-correlation `y[b, o, t] = bias[o] + sum_{c,k} w[o, c, k] x[b, c, t*stride + k - padding]`.
///
/// Shapes: `x[B, C_in, L]`, `w[C_out, C_in, K]`, `b[C_out]` -> `[B, C_out, L_out]`.
pub fn conv1d<'g, T: Real>(
    x: Var<'g, T>,
    w: Var<'g, T>,
    b: Var<'g, T>,
    stride: usize,
    padding: usize,
) -> Result<Var<'g, T>> {
    let (xs, ws) = (x.shape(), w.shape());
    expect_rank("conv1d", &xs, 3)?;
    expect_rank("conv1d", &ws, 3)?;
    let (batch, cin, len) = (xs[0], xs[1], xs[2]);
    let (cout, kernel) = (ws[0], ws[2]);
    expect_dim("conv1d", "in_channels", ws[1], cin)?;
    expect_dim("conv1d", "out_channels", cout, b.numel())?;
    let lout = conv_out_len(len, kernel, stride, padding).ok_or_else(|| NnError::Config {
        op: "conv1d",
        detail: format!("empty output for L={len}, K={kernel}, stride={stride}, padding={padding}"),
    })?;
    let geo = Geometry {
        channels: cin,
        len,
        kernel,
        stride,
        padding,
        positions: lout,
    };
    let ck = cin * kernel;
    let (xv, wv, bv) = (x.value(), w.value(), b.value());

    let mut out = vec![T::zero(); batch * cout * lout];
    par::for_each_chunk_mut(&mut out, cout * lout, |bi, y| {
        let mut col = vec![T::zero(); ck * lout];
        geo.im2col(&xv.data()[bi * cin * len..(bi + 1) * cin * len], &mut col);
        for (o, row) in y.chunks_mut(lout).enumerate() {
            row.iter_mut().for_each(|v| *v = bv.data()[o]);
        }
        gemm(
            T::one(),
            Mat::row_major(wv.data(), cout, ck),
            Mat::row_major(&col, ck, lout),
            T::one(),
            y,
        );
    });
    let t = Tensor::new(&[batch, cout, lout], out)?;
    let need = (x.requires_grad(), w.requires_grad(), b.requires_grad());
    Ok(x.graph().record(t, &[x, w, b], move |g| {
        let parts = par::map_range(batch, |bi| {
            let gy = &g[bi * cout * lout..(bi + 1) * cout * lout];
            let gx = need.0.then(|| {
                let mut gcol = vec![T::zero(); ck * lout];
                gemm(
                    T::one(),
                    Mat::row_major(wv.data(), cout, ck).t(),
                    Mat::row_major(gy, cout, lout),
                    T::zero(),
                    &mut gcol,
                );
                let mut gx = vec![T::zero(); cin * len];
                geo.col2im(&gcol, &mut gx);
                gx
            });
            let gw = need.1.then(|| {
                let mut col = vec![T::zero(); ck * lout];
                geo.im2col(&xv.data()[bi * cin * len..(bi + 1) * cin * len], &mut col);
                let mut gw = vec![T::zero(); cout * ck];
                gemm(
                    T::one(),
                    Mat::row_major(gy, cout, lout),
                    Mat::row_major(&col, ck, lout).t(),
                    T::zero(),
                    &mut gw,
                );
                gw
            });
            (gx, gw)
        });
        let (gxs, gws): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        let gx = need.0.then(|| gxs.into_iter().flatten().flatten().collect());
        let gw = need
            .1
            .then(|| sum_in_order(gws.into_iter().flatten().collect(), cout * ck));
        let gb = need.2.then(|| bias_grad(g, cout, lout));
        vec![gx, gw, gb]
    }))
}

/// Transposed convolution (the adjoint of [`conv1d`] with respect to its input).
///
/// Shapes: `x[B, C_in, L]`, `w[C_in, C_out, K]`, `b[C_out]` -> `[B, C_out, L_out]` with
/// `L_out = (L - 1) * stride - 2 * padding + K + output_padding`.
pub fn conv1d_transpose<'g, T: Real>(
    x: Var<'g, T>,
    w: Var<'g, T>,
    b: Var<'g, T>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Var<'g, T>> {
    let (xs, ws) = (x.shape(), w.shape());
    expect_rank("conv1d_transpose", &xs, 3)?;
    expect_rank("conv1d_transpose", &ws, 3)?;
    let (batch, cin, lin) = (xs[0], xs[1], xs[2]);
    let (cout, kernel) = (ws[1], ws[2]);
    expect_dim("conv1d_transpose", "in_channels", ws[0], cin)?;
    expect_dim("conv1d_transpose", "out_channels", cout, b.numel())?;
    if output_padding >= stride.max(1) {
        return Err(NnError::Config {
            op: "conv1d_transpose",
            detail: format!("output_padding {output_padding} must be smaller than stride {stride}"),
        });
    }
    let lout = conv_transpose_out_len(lin, kernel, stride, padding, output_padding).ok_or_else(
        || NnError::Config {
            op: "conv1d_transpose",
            detail: format!("empty output for L={lin}, K={kernel}, stride={stride}"),
        },
    )?;
    let geo = Geometry {
        channels: cout,
        len: lout,
        kernel,
        stride,
        padding,
        positions: lin,
    };
    let ck = cout * kernel;
    let (xv, wv, bv) = (x.value(), w.value(), b.value());

    let mut out = vec![T::zero(); batch * cout * lout];
    par::for_each_chunk_mut(&mut out, cout * lout, |bi, y| {
        let mut col = vec![T::zero(); ck * lin];
        gemm(
            T::one(),
            Mat::row_major(wv.data(), cin, ck).t(),
            Mat::row_major(&xv.data()[bi * cin * lin..(bi + 1) * cin * lin], cin, lin),
            T::zero(),
            &mut col,
        );
        geo.col2im(&col, y);
        for (o, row) in y.chunks_mut(lout).enumerate() {
            let bias = bv.data()[o];
            row.iter_mut().for_each(|v| *v += bias);
        }
    });
    let t = Tensor::new(&[batch, cout, lout], out)?;
    let need = (x.requires_grad(), w.requires_grad(), b.requires_grad());
    Ok(x.graph().record(t, &[x, w, b], move |g| {
        let parts = par::map_range(batch, |bi| {
            let mut gcol = vec![T::zero(); ck * lin];
            geo.im2col(&g[bi * cout * lout..(bi + 1) * cout * lout], &mut gcol);
            let gx = need.0.then(|| {
                let mut gx = vec![T::zero(); cin * lin];
                gemm(
                    T::one(),
                    Mat::row_major(wv.data(), cin, ck),
                    Mat::row_major(&gcol, ck, lin),
                    T::zero(),
                    &mut gx,
                );
                gx
            });
            let gw = need.1.then(|| {
                let mut gw = vec![T::zero(); cin * ck];
                gemm(
                    T::one(),
                    Mat::row_major(&xv.data()[bi * cin * lin..(bi + 1) * cin * lin], cin, lin),
                    Mat::row_major(&gcol, ck, lin).t(),
                    T::zero(),
                    &mut gw,
                );
                gw
            });
            (gx, gw)
        });
        let (gxs, gws): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        let gx = need.0.then(|| gxs.into_iter().flatten().flatten().collect());
        let gw = need
            .1
            .then(|| sum_in_order(gws.into_iter().flatten().collect(), cin * ck));
        let gb = need.2.then(|| bias_grad(g, cout, lout));
        vec![gx, gw, gb]
    }))
}
