//! DetectorNet: a spatial-temporal graph neural network for traffic
//! forecasting, built on a hand-rolled reverse-mode autodiff core.
//!
//! The model stacks multi-view temporal attention (per-view and global
//! self-attention over the input window) with a dynamic spatial graph
//! convolution (diffusion over static transition matrices plus a learned,
//! input-dependent adjacency), followed by a two-layer convolutional
//! predictor trained with masked MAE.

pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use tensor::Tensor;
