//! Efficient dense-asymmetric (EDA) segmentation networks for multi-class
//! lane marking: differentiable CPU primitives, the EDA building blocks,
//! declarative architecture schedules with the EDANet family of presets,
//! static cost and receptive-field analysis, a procedural road-scene
//! generator, and the training, evaluation and latency tooling around them.
//!
//! Numeric code is generic over [`Scalar`]; `f32` is the production width
//! and `f64` backs gradient verification. The aliases below name the common
//! instantiations.

pub mod analyzer;
pub mod arch;
pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;

pub use arch::{parse_spec, preset, serialize_spec, ArchitectureSpec, Stage};
pub use error::{Error, Result};
pub use layers::Mode;
pub use network::Network;
pub use rng::SplitMix64;
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
