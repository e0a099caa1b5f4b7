//! Minimal reverse-mode automatic differentiation for 1-D signal models.
//!
//! A [`Graph`] records eagerly evaluated ops; [`Graph::backward`] performs a
//! single reverse sweep and returns leaf gradients, which a [`ParamStore`]
//! accumulates until [`ParamStore::zero_grad`] is called. Layers cover what a
//! small residual classifier and a convolutional VAE need: dense, 1-D
//! convolution and its transpose, ReLU, batch normalization, softmax
//! cross-entropy, MSE and the Gaussian reparameterization trick.
//!
//! Element types are generic over [`Real`]: models train in `f32` and the
//! gradient tests run the same code in `f64`.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod init;
pub mod layers;
pub mod linalg;
pub mod ops;
mod optim;
pub mod par;
mod params;
mod real;
mod tensor;

pub use error::{NnError, Result};
pub use graph::{BackwardFn, Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{Param, ParamId, ParamStore};
pub use real::{DType, Real};
pub use tensor::Tensor;
