//! Adversarial stacked convolutional autoencoders trained layer by layer.
//!
//! The crate is self-contained: dense `f64` tensors, convolution layers with
//! hand-written backward passes, Adam, the adversarial objectives, stackable
//! autoencoder/discriminator models, the layer-wise trainer with its
//! baselines, dataset I/O, checkpoints and the experiment CLI.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
mod fsutil;
pub mod gradcheck;
pub mod kv;
pub mod layer;
pub mod loss;
pub mod model;
pub mod objectives;
pub mod ops;
pub mod param;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{
    Architecture, BlockId, DiscriminatorStack, GeneratorStack, Sequential, ShallowAutoencoder,
    ShallowDiscriminator, StageFactory,
};
pub use objectives::{GeneratorObjective, LossWeights};
pub use rng::SeededRng;
pub use tensor::Tensor;
pub use trainer::StageConfig;
