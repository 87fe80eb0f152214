//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records every primitive applied to its [`Tensor`] handles;
//! [`Graph::backward`] walks the record in reverse and returns the
//! [`Gradients`] of a scalar loss with respect to every leaf created with
//! [`Graph::param`]. Broadcasting is limited to one-element tensors
//! ([`Tensor::expand_scalar`]) and per-axis bias/scale
//! ([`Tensor::add_bias`], [`Tensor::mul_bias`]).
//!
//! Detached data lives in [`Array`], which is `Send`; graph handles are not.

mod array;
pub mod check;
mod conv;
mod elementwise;
mod graph;
mod linalg;
mod norm;
mod sample;
mod shape_ops;

pub use array::Array;
pub use elementwise::{sigmoid, softplus};
pub use graph::{GradSink, Gradients, Graph, Tensor};
pub use norm::BatchStats;
