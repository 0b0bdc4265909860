//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! The operator set is exactly what the forecasting network needs: affine
//! maps, dilated causal convolution, GIN aggregation, batch normalisation,
//! reductions and a handful of elementwise ops. A [`Tape`] records one forward
//! pass; [`Tape::backward`] replays it in reverse and returns gradients for
//! every parameter leaf reachable from the loss.

mod kernels;
mod tape;
mod tensor;

pub use tape::{
    Adjacency, BatchStats, Gradients, NormMode, Reduce, Tape, Var, BN_EPSILON, BN_MOMENTUM,
};
pub use tensor::Tensor;
