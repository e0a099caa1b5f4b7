use crate::error::{NnError, Result};
use crate::graph::Var;
use crate::real::Real;
use crate::tensor::Tensor;

use super::expect_dim;

fn same_shape<T: Real>(op: &'static str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != sb.len() {
        return Err(NnError::Rank {
            op,
            expected: sa.len(),
            got: sb,
        });
    }
    for (x, y) in sa.iter().zip(&sb) {
        expect_dim(op, "elements", *x, *y)?;
    }
    Ok(())
}

fn map_unary<'g, T: Real>(
    x: Var<'g, T>,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + 'static,
) -> Var<'g, T> {
    let xv = x.value();
    let out: Vec<T> = xv.data().iter().map(|&v| f(v)).collect();
    let out_t = Tensor::new(xv.shape(), out).expect("shape preserved");
    let yv = std::sync::Arc::new(out_t.clone());
    x.graph().record(out_t, &[x], move |g| {
        let gx = g
            .iter()
            .zip(xv.data())
            .zip(yv.data())
            .map(|((&g, &x), &y)| g * df(x, y))
            .collect();
        vec![Some(gx)]
    })
}

impl<'g, T: Real> Var<'g, T> {
    pub fn add(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        same_shape("add", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let out = a.data().iter().zip(b.data()).map(|(x, y)| *x + *y).collect();
        let t = Tensor::new(a.shape(), out)?;
        Ok(self
            .graph()
            .record(t, &[self, other], |g| vec![Some(g.to_vec()), Some(g.to_vec())]))
    }

    pub fn sub(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        same_shape("sub", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let out = a.data().iter().zip(b.data()).map(|(x, y)| *x - *y).collect();
        let t = Tensor::new(a.shape(), out)?;
        Ok(self.graph().record(t, &[self, other], |g| {
            vec![Some(g.to_vec()), Some(g.iter().map(|v| -*v).collect())]
        }))
    }

    pub fn mul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        same_shape("mul", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let out = a.data().iter().zip(b.data()).map(|(x, y)| *x * *y).collect();
        let t = Tensor::new(a.shape(), out)?;
        Ok(self.graph().record(t, &[self, other], move |g| {
            let ga = g.iter().zip(b.data()).map(|(g, y)| *g * *y).collect();
            let gb = g.iter().zip(a.data()).map(|(g, x)| *g * *x).collect();
            vec![Some(ga), Some(gb)]
        }))
    }

    pub fn scale(self, c: T) -> Var<'g, T> {
        map_unary(self, move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: T) -> Var<'g, T> {
        map_unary(self, move |v| v + c, |_, _| T::one())
    }

    pub fn neg(self) -> Var<'g, T> {
        self.scale(-T::one())
    }

    pub fn square(self) -> Var<'g, T> {
        map_unary(self, |v| v * v, |x, _| x + x)
    }

    pub fn exp(self) -> Var<'g, T> {
        map_unary(self, |v| v.exp(), |_, y| y)
    }

    pub fn relu(self) -> Var<'g, T> {
        map_unary(
            self,
            |v| if v > T::zero() { v } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// Sum of all elements (scalar).
    pub fn sum(self) -> Var<'g, T> {
        let xv = self.value();
        let n = xv.numel();
        let s = xv.data().iter().copied().sum::<T>();
        self.graph()
            .record(Tensor::scalar(s), &[self], move |g| vec![Some(vec![g[0]; n])])
    }

    /// Mean of all elements (scalar).
    pub fn mean(self) -> Var<'g, T> {
        let n = self.numel();
        self.sum().scale(T::one() / T::of(n as f64))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, T>> {
        let xv = self.value();
        let t = (*xv).clone().reshaped(shape)?;
        Ok(self.graph().record(t, &[self], |g| vec![Some(g.to_vec())]))
    }

    /// `[B, ...] -> [B, prod(...)]`.
    pub fn flatten(self) -> Result<Var<'g, T>> {
        let s = self.shape();
        if s.is_empty() {
            return Err(NnError::Rank {
                op: "flatten",
                expected: 1,
                got: s,
            });
        }
        let rest: usize = s[1..].iter().product();
        self.reshape(&[s[0], rest])
    }

    /// Adds a per-channel bias `b[C]` to `x[B, C, ...]`.
    pub fn add_channel_bias(self, bias: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = self.shape();
        if s.len() < 2 {
            return Err(NnError::Rank {
                op: "add_channel_bias",
                expected: 2,
                got: s,
            });
        }
        let c = s[1];
        expect_dim("add_channel_bias", "channels", c, bias.numel())?;
        let inner: usize = s[2..].iter().product();
        let (xv, bv) = (self.value(), bias.value());
        let mut out = xv.data().to_vec();
        for (i, chunk) in out.chunks_mut(inner).enumerate() {
            let b = bv.data()[i % c];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        let t = Tensor::new(&s, out)?;
        Ok(self.graph().record(t, &[self, bias], move |g| {
            let mut gb = vec![T::zero(); c];
            for (i, chunk) in g.chunks(inner).enumerate() {
                gb[i % c] += chunk.iter().copied().sum::<T>();
            }
            vec![Some(g.to_vec()), Some(gb)]
        }))
    }

    /// Mean over the last axis: `[B, C, L] -> [B, C]`.
    pub fn global_avg_pool(self) -> Result<Var<'g, T>> {
        let s = self.shape();
        super::expect_rank("global_avg_pool", &s, 3)?;
        let (b, c, l) = (s[0], s[1], s[2]);
        let xv = self.value();
        let inv = T::one() / T::of(l as f64);
        let out = xv
            .data()
            .chunks(l)
            .map(|row| row.iter().copied().sum::<T>() * inv)
            .collect();
        let t = Tensor::new(&[b, c], out)?;
        Ok(self.graph().record(t, &[self], move |g| {
            let mut gx = Vec::with_capacity(b * c * l);
            for &gv in g {
                gx.extend(std::iter::repeat_n(gv * inv, l));
            }
            vec![Some(gx)]
        }))
    }
}

/// Concatenates tensors along `axis`; all other dimensions must agree.
pub fn concat<'g, T: Real>(vars: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>> {
    let first = vars.first().ok_or_else(|| NnError::Config {
        op: "concat",
        detail: "no inputs".into(),
    })?;
    let s0 = first.shape();
    if axis >= s0.len() {
        return Err(NnError::Config {
            op: "concat",
            detail: format!("axis {axis} out of range for rank {}", s0.len()),
        });
    }
    let outer: usize = s0[..axis].iter().product();
    let inner: usize = s0[axis + 1..].iter().product();
    let mut sizes = Vec::with_capacity(vars.len());
    for v in vars {
        let s = v.shape();
        if s.len() != s0.len() {
            return Err(NnError::Rank {
                op: "concat",
                expected: s0.len(),
                got: s,
            });
        }
        for (d, (&a, &b)) in s0.iter().zip(&s).enumerate() {
            if d != axis {
                expect_dim("concat", "non-concatenated axis", a, b)?;
            }
        }
        sizes.push(s[axis]);
    }
    let total: usize = sizes.iter().sum();
    let values: Vec<_> = vars.iter().map(|v| v.value()).collect();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &sz) in values.iter().zip(&sizes) {
            out.extend_from_slice(&v.data()[o * sz * inner..(o + 1) * sz * inner]);
        }
    }
    let mut shape = s0.clone();
    shape[axis] = total;
    let t = Tensor::new(&shape, out)?;
    Ok(first.graph().record(t, vars, move |g| {
        let mut grads: Vec<Vec<T>> = sizes
            .iter()
            .map(|&sz| Vec::with_capacity(outer * sz * inner))
            .collect();
        let mut off = 0;
        for _ in 0..outer {
            for (gv, &sz) in grads.iter_mut().zip(&sizes) {
                gv.extend_from_slice(&g[off..off + sz * inner]);
                off += sz * inner;
            }
        }
        grads.into_iter().map(Some).collect()
    }))
}
