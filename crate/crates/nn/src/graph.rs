//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and `backward` is a single reverse sweep.

use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Vector-Jacobian product of one node: receives the output gradient and
/// returns one optional gradient per parent, in parent order.
pub type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Op,
    Constant,
    Input,
    Param { store: u64, id: ParamId },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    kind: Kind,
}

/// Computation graph for one forward/backward pass.
pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Real> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> usize {
        debug_assert!(
            node.value.is_finite() || !matches!(node.kind, Kind::Op),
            "non-finite values produced by an op (shape {:?})",
            node.value.shape()
        );
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.constant_shared(Arc::new(value))
    }

    pub fn constant_shared(&self, value: Arc<Tensor<T>>) -> Var<'_, T> {
        let id = self.push(Node {
            value,
            parents: vec![],
            backward: None,
            requires_grad: false,
            kind: Kind::Constant,
        });
        Var { graph: self, id }
    }

    /// Leaf whose gradient is reported in [`Gradients::get`].
    pub fn input(&self, value: Tensor<T>) -> Var<'_, T> {
        let id = self.push(Node {
            value: Arc::new(value),
            parents: vec![],
            backward: None,
            requires_grad: true,
            kind: Kind::Input,
        });
        Var { graph: self, id }
    }

    /// Leaf bound to a stored parameter. Non-trainable entries become constants.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        let trainable = store.get(id).trainable();
        let nid = self.push(Node {
            value: store.shared_value(id),
            parents: vec![],
            backward: None,
            requires_grad: trainable,
            kind: if trainable {
                Kind::Param {
                    store: store.uid(),
                    id,
                }
            } else {
                Kind::Constant
            },
        });
        Var {
            graph: self,
            id: nid,
        }
    }

    /// Parameter used read-only (no gradient flows into the store).
    pub fn frozen(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        self.constant_shared(store.shared_value(id))
    }

    /// Records an operation. `backward` is kept only if some parent needs a gradient.
    pub fn record<F>(&self, value: Tensor<T>, parents: &[Var<'_, T>], backward: F) -> Var<'_, T>
    where
        F: Fn(&[T]) -> Vec<Option<Vec<T>>> + 'static,
    {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let id = self.push(Node {
            value: Arc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            requires_grad,
            kind: Kind::Op,
        });
        Var { graph: self, id }
    }

    fn value_of(&self, id: usize) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(NnError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.id).map(|_| None).collect();
        let mut leaves = Vec::new();
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            match node.kind {
                Kind::Op => {
                    let Some(bw) = node.backward.as_ref() else {
                        continue;
                    };
                    let pgrads = bw(&g);
                    debug_assert_eq!(pgrads.len(), node.parents.len());
                    for (&p, pg) in node.parents.iter().zip(pgrads) {
                        if p >= id {
                            return Err(NnError::Cycle { node: id, parent: p });
                        }
                        let Some(pg) = pg else { continue };
                        if !nodes[p].requires_grad {
                            continue;
                        }
                        assert_eq!(
                            pg.len(),
                            nodes[p].value.numel(),
                            "gradient length mismatch flowing into node {p}"
                        );
                        match grads[p].as_mut() {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                            None => grads[p] = Some(pg),
                        }
                    }
                }
                Kind::Input | Kind::Param { .. } => leaves.push((id, node.kind, g)),
                Kind::Constant => {}
            }
        }
        Ok(Gradients { leaves })
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    leaves: Vec<(usize, Kind, Vec<T>)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of an `input` (or parameter) leaf, if it was reached.
    pub fn get(&self, var: Var<'_, T>) -> Option<&[T]> {
        self.leaves
            .iter()
            .find(|(id, _, _)| *id == var.id)
            .map(|(_, _, g)| g.as_slice())
    }

    pub(crate) fn param_grads(&self) -> impl Iterator<Item = (u64, ParamId, &[T])> {
        self.leaves.iter().filter_map(|(_, kind, g)| match kind {
            Kind::Param { store, id } => Some((*store, *id, g.as_slice())),
            _ => None,
        })
    }
}

impl<'g, T: Real> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.graph.nodes.borrow()[self.id].value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> T {
        self.value().item()
    }
}
