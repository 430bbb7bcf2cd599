//! Tape-based reverse-mode automatic differentiation over `ndarray`.
//!
//! A [`Graph`] records every op applied to its [`Var`]s; calling
//! [`Graph::backward`] on a scalar output returns gradients for every leaf
//! created with [`Graph::variable`]. Spatial tensors use the
//! `[batch, channels, height, width]` layout throughout.

mod graph;
mod ops;
mod real;

pub mod gradcheck;

pub use graph::{BackwardFn, Gradients, Graph, Tensor, Var};
pub use ops::{dims4, Conv2dGeometry, ResampleMatrix};
pub use real::Real;

pub use ndarray;
