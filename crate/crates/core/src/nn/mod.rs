//! A small multilayer-perceptron engine: batched forward passes, exact
//! backpropagation, and Adam. Enough to train the generative model, nothing
//! more.

mod adam;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{Activation, ForwardCache, Layer, Mlp, MlpParams, MlpSpec};
