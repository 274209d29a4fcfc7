//! Reverse-mode differentiation over multi-channel 2D arrays.
//!
//! A [`Tape`] records every operation of one forward pass in creation order,
//! which is already a topological order. [`Tape::backward`] walks it once in
//! reverse and accumulates vector-Jacobian products into every node that
//! depends on a leaf created with [`Tape::leaf`].
//!
//! The primitive set is deliberately small: 3x3 convolutions, 2x2 stride-2
//! convolutions and their transposes, LeakyReLU, channel concatenation,
//! elementwise arithmetic, reductions, even-size padding/cropping, and
//! [`LinearOp`] nodes that wrap any matrix-free linear map with a transpose.

mod conv;
mod error;
mod tape;
mod tensor;

pub use error::{DiffError, Result};
pub use tape::{LinearOp, Tape, Var};
pub use tensor::Tensor;
