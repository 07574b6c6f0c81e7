//! Workbench for training, quantizing and cost-profiling neural PDE surrogates.

pub mod cost;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod models;
pub mod quant;
pub mod rescale;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{ComplexTensor, Padding, Tensor};
