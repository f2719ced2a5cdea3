//! Unsupervised image dehazing by haze consistency and system equivariance.
//!
//! The dehazer `f` is trained from hazy images only, minimizing
//! `L(H(f(y)), y) + λ·L(f(H(T_g f(y))), T_g f(y))` over hazy images `y` and
//! sampled transformations `g`, where `H` is a frozen haze operator: either the
//! atmospheric scattering model or a generator learned adversarially from
//! unpaired clear and hazy images.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` for training, `f64`
//! for gradient checks); the aliases below fix the common instantiations.

pub mod adversarial;
pub mod data;
pub mod error;
pub mod network;
pub mod physics;
pub mod scalar;
pub mod tensor;
pub mod trainer;
pub mod transforms;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type Graph64 = tensor::Graph<f64>;
