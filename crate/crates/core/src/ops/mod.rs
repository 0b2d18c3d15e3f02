//! Differentiable primitives over rank-4 tensors. Each forward function has
//! a matching `*_backward` that maps an upstream gradient to input (and
//! parameter) gradients.

mod activation;
mod concat;
mod conv;
mod loss;
mod norm;
mod pool;
mod resample;

pub use activation::{dropout, dropout_backward, relu, relu_backward};
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d, conv2d_backward, ConvGeometry, ConvGrads};
pub use loss::{softmax, softmax_cross_entropy};
pub use norm::{batchnorm2d, batchnorm2d_backward, BnCache, NormMode};
pub use pool::{avgpool2d, avgpool2d_backward, maxpool2d, maxpool2d_backward};
pub use resample::{upsample_bilinear, upsample_bilinear_backward};
