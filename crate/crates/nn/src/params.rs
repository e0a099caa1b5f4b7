use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{NnError, Result};
use crate::graph::Gradients;
use crate::real::Real;
use crate::tensor::Tensor;

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    value: Arc<Tensor<T>>,
    grad: Option<Vec<T>>,
    trainable: bool,
}

impl<T: Real> Param<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }
}

/// Named parameter tensors owned by one model. Non-trainable entries hold
/// buffers such as batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    uid: u64,
    params: Vec<Param<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
        }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    /// Registers a tensor. Panics on a duplicate name, which is a model-construction bug.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name `{name}`"
        );
        self.params.push(Param {
            name,
            value: Arc::new(value),
            grad: None,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub(crate) fn shared_value(&self, id: ParamId) -> Arc<Tensor<T>> {
        Arc::clone(&self.params[id.0].value)
    }

    /// Mutable access; copies the tensor if a live graph still references it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn grad(&self, id: ParamId) -> Option<&[T]> {
        self.params[id.0].grad.as_deref()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, _)| id)
            .collect()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            if let Some(g) = p.grad.as_mut() {
                g.iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    /// Drops gradient buffers entirely (an optimizer step then reports missing grads).
    pub fn clear_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds the parameter gradients from a backward pass. Gradients of leaves
    /// that belong to a different store are ignored.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (store, id, g) in grads.param_grads() {
            if store != self.uid {
                continue;
            }
            self.accumulate_raw(id, g);
        }
    }

    /// Adds `g` into the gradient buffer of `id`.
    pub fn accumulate_raw(&mut self, id: ParamId, g: &[T]) {
        let p = &mut self.params[id.0];
        assert_eq!(g.len(), p.value.numel(), "gradient length for `{}`", p.name);
        match p.grad.as_mut() {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += *b),
            None => p.grad = Some(g.to_vec()),
        }
    }

    /// Replaces the value of `id`, checking the shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(NnError::Checkpoint(format!(
                "shape mismatch for `{}`: {:?} vs {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = Arc::new(value);
        Ok(())
    }

    /// Global L2 norm of all accumulated gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|v| {
                let x = v.to_f64().unwrap_or(0.0);
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Converts every tensor to another element type (gradients are dropped).
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Arc::new(p.value.cast()),
                    grad: None,
                    trainable: p.trainable,
                })
                .collect(),
        }
    }
}
