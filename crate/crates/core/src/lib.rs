//! Epigenetic neuroevolution of convolutional networks: populations of layered
//! conv/FC networks whose structure evolves by speciated mutation and crossover
//! while offspring inherit the weights their parents learned.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the command-line tool and most callers.

pub mod autograd;
pub mod data;
pub mod ecosystem;
mod error;
pub mod evo;
pub mod genome;
pub mod model;
pub mod optim;
pub mod rng;
mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = autograd::Tape<f64>;
pub type Parameter = optim::Parameter<f64>;
pub type Network = model::Network<f64>;
pub type Ecosystem = ecosystem::Ecosystem<f64>;

pub type TensorF32 = tensor::Tensor<f32>;
pub type NetworkF32 = model::Network<f32>;
pub type EcosystemF32 = ecosystem::Ecosystem<f32>;
