//! Central finite-difference gradient verification at `f64`.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheck {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)`.
    pub fn rel_error(&self) -> f64 {
        let diff: f64 = self
            .analytic
            .iter()
            .zip(&self.numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let na = self.analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = self.numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = na.max(nn);
        if scale < 1e-300 {
            diff
        } else {
            diff / scale
        }
    }
}

/// Gradient of the scalar `f(x)` with respect to the input `x`.
pub fn check_input<F>(x: &Tensor<f64>, h: f64, f: F) -> Result<GradCheck>
where
    F: for<'g> Fn(Var<'g, f64>) -> Result<Var<'g, f64>>,
{
    let g = Graph::new();
    let xv = g.input(x.clone());
    let y = f(xv)?;
    let grads = g.backward(y)?;
    let analytic = grads
        .get(xv)
        .map(|s| s.to_vec())
        .unwrap_or_else(|| vec![0.0; x.numel()]);
    let eval = |t: Tensor<f64>| -> Result<f64> {
        let g = Graph::new();
        let v = g.constant(t);
        Ok(f(v)?.item())
    };
    let mut numeric = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * h));
    }
    Ok(GradCheck { analytic, numeric })
}

/// Gradient of `f` with respect to the listed parameters. At most
/// `max_per_param` evenly spaced elements of each parameter are probed.
pub fn check_params<F>(
    store: &ParamStore<f64>,
    ids: &[ParamId],
    h: f64,
    max_per_param: usize,
    f: F,
) -> Result<GradCheck>
where
    F: for<'g> Fn(&'g Graph<f64>, &ParamStore<f64>) -> Result<Var<'g, f64>>,
{
    let g = Graph::new();
    let y = f(&g, store)?;
    let grads = g.backward(y)?;
    let mut with_grad = store.clone();
    with_grad.clear_grad();
    with_grad.accumulate(&grads);

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut work = store.clone();
    for &id in ids {
        let n = store.value(id).numel();
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        let full = with_grad
            .grad(id)
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        for i in (0..n).step_by(stride) {
            let orig = store.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + h;
            let gp = Graph::new();
            let fp = f(&gp, &work)?.item();
            work.value_mut(id).data_mut()[i] = orig - h;
            let gm = Graph::new();
            let fm = f(&gm, &work)?.item();
            work.value_mut(id).data_mut()[i] = orig;
            numeric.push((fp - fm) / (2.0 * h));
            analytic.push(full[i]);
        }
    }
    Ok(GradCheck { analytic, numeric })
}
