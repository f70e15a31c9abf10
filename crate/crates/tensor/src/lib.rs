//! Dense `f32` tensors with a small tape-free reverse-mode autodiff.
//!
//! Every activation is a rank-5 `[batch, channels, depth, height, width]`
//! tensor. Two-dimensional networks run with `depth == 1` and kernels of
//! depth 1, so a single convolution path serves both dimensionalities.
//!
//! Graph nodes are reference counted ([`Var`]); the graph is whatever is
//! reachable from the value passed to [`Var::backward`]. Trainable weights
//! live in [`Param`] cells that outlive a single graph and accumulate
//! gradients across backward passes until zeroed.

mod conv;
mod ops;
mod param;
mod tensor;
mod var;

pub use conv::{conv, conv_transpose_up, ConvGeometry};
pub use ops::{
    add, batch_norm, channel_gate, concat_channels, global_avg_pool, instance_norm, max_pool,
    mean_of, relu, scale, sigmoid, swish, upsample_nearest, NormStats,
};
pub use param::Param;
pub use tensor::Tensor;
pub use var::Var;
