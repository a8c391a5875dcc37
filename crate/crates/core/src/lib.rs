//! Inductive spatio-temporal kriging.
//!
//! Reconstructs the time series of unobserved (virtual) sensors from the
//! readings of observed sensors and a weighted sensor graph. The model is a
//! graph-aware sequence encoder trained with decrement masking: during each
//! training step a random subset of observed nodes is hidden and the network
//! learns to recover them, so at inference time it generalizes to nodes that
//! were never seen during training.
//!
//! The crate is organized bottom-up:
//!
//! * [`autodiff`]: a small reverse-mode automatic differentiation engine on a
//!   flat tape of dense `f64` tensors.
//! * [`graph`]: weighted sensor graphs, construction from distances or
//!   coordinates, normalization, and biconnected-component analysis.
//! * [`encoder`]: the forward model, a style-modulated message-passing
//!   encoder over windowed readings.
//! * [`contrast`]: stochastic augmentations, component prototypes, and the
//!   contrastive regularizer used during training.
//! * [`denoise`]: similarity-driven edge downweighting applied to dense
//!   graphs before the second encoding pass.
//! * [`train`]: the optimization loop, checkpointing, and inference.
//! * [`linalg`]: the dense matrix kernels under everything else, with
//!   sequential and row-parallel variants.
//! * [`data`]: synthetic dataset generation, file loading, splits and
//!   normalization, baselines, and evaluation metrics.

#![forbid(unsafe_code)]

pub mod autodiff;
pub mod contrast;
pub mod data;
pub mod denoise;
pub mod encoder;
pub mod eval;
mod error;
pub mod graph;
pub mod train;
pub mod linalg;

pub use error::{Error, Result};
pub use graph::{find_bccs, BccDecomposition, SensorGraph, ThresholdMode};
