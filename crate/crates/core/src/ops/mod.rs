//! Differentiable primitives. Every forward has an explicit backward; there
//! is no tape and no implicit broadcasting.

mod activation;
mod concat;
mod conv;
mod pool;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar};
pub use concat::{concat_channels, split_channels};
pub use conv::{
    conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward,
    ConvGrads, ConvParams,
};
pub use pool::{maxpool2, maxpool2_backward, ArgmaxMap};
