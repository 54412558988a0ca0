//! Minimal CPU neural-network toolkit: NCHW tensors, layers with explicit
//! backward passes, and the Adam optimizer.

mod gemm;
pub mod encoder;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod param;
pub mod tensor;

pub use encoder::ConvEncoder;
pub use layers::{Conv2d, GroupNorm, Linear};
pub use optim::{Adam, AdamConfig};
pub use param::{Module, Param, ParamSpec};
pub use tensor::Tensor;

#[cfg(test)]
mod gradcheck;
