pub mod error;
pub mod heads;
pub mod io;
pub mod math;
pub mod nn;
pub mod plot;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
pub mod benchmark;
pub mod data;
pub mod estimators;
pub mod model;
pub mod two_sample;
