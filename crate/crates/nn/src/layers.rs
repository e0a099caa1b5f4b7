//! Parameterized layers. Each layer owns [`ParamId`]s into a model's store and
//! builds its ops on a [`Ctx`].

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::init::kaiming_uniform;
use crate::ops::{self, BatchStats};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Binds a parameter store to a graph for one forward pass.
pub struct Ctx<'g, 's, T: Real> {
    pub graph: &'g Graph<T>,
    pub store: &'s ParamStore<T>,
    /// Parameters enter as constants (no gradient reaches the store).
    pub frozen: bool,
    /// Training-mode behaviour (batch statistics in normalization layers).
    pub train: bool,
}

impl<'g, 's, T: Real> Ctx<'g, 's, T> {
    pub fn new(graph: &'g Graph<T>, store: &'s ParamStore<T>) -> Self {
        Ctx {
            graph,
            store,
            frozen: false,
            train: true,
        }
    }

    /// Read-only inference binding.
    pub fn inference(graph: &'g Graph<T>, store: &'s ParamStore<T>) -> Self {
        Ctx {
            graph,
            store,
            frozen: true,
            train: false,
        }
    }

    pub fn p(&self, id: ParamId) -> Var<'g, T> {
        if self.frozen {
            self.graph.frozen(self.store, id)
        } else {
            self.graph.param(self.store, id)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Dense {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(&[out_features, in_features], in_features, rng),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_features]), true);
        Dense {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        ops::dense(x, ctx.p(self.weight), ctx.p(self.bias))
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(&[out_channels, in_channels, kernel], in_channels * kernel, rng),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]), true);
        Conv1d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        ops::conv1d(x, ctx.p(self.weight), ctx.p(self.bias), self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvTranspose1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel).div_ceil(stride.max(1));
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(&[in_channels, out_channels, kernel], fan_in, rng),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]), true);
        ConvTranspose1d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            output_padding,
        }
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        ops::conv1d_transpose(
            x,
            ctx.p(self.weight),
            ctx.p(self.bias),
            self.stride,
            self.padding,
            self.output_padding,
        )
    }
}

/// Batch normalization over `[B, C, L]` with running statistics kept as
/// non-trainable store entries.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        BatchNorm1d {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one()), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]), false),
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::full(&[channels], T::one()),
                false,
            ),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Returns the batch statistics in training mode so the caller can fold
    /// them into the running averages after the step.
    pub fn forward<'g, T: Real>(
        &self,
        ctx: &Ctx<'g, '_, T>,
        x: Var<'g, T>,
    ) -> Result<(Var<'g, T>, Option<BatchStats<T>>)> {
        let (gamma, beta) = (ctx.p(self.gamma), ctx.p(self.beta));
        if ctx.train {
            let (y, stats) = ops::batch_norm_train(x, gamma, beta, T::of(self.eps))?;
            Ok((y, Some(stats)))
        } else {
            let y = ops::channel_affine(
                x,
                gamma,
                beta,
                ctx.store.value(self.running_mean).data(),
                ctx.store.value(self.running_var).data(),
                T::of(self.eps),
            )?;
            Ok((y, None))
        }
    }

    pub fn update_running<T: Real>(&self, store: &mut ParamStore<T>, stats: &BatchStats<T>) {
        let m = T::of(self.momentum);
        let keep = T::one() - m;
        for (r, &s) in store.value_mut(self.running_mean).data_mut().iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * s;
        }
        for (r, &s) in store.value_mut(self.running_var).data_mut().iter_mut().zip(&stats.var) {
            *r = keep * *r + m * s;
        }
    }
}
