//! Differentially private training for switch-style mixture-of-experts
//! classifiers, at desk scale.
//!
//! The crate provides:
//! - a minimal dense tensor kernel with deterministic seeded randomness,
//! - a switch-MoE classifier with explicit forward/backward passes,
//! - per-sample gradient computation for expert layers via two
//!   interchangeable strategies (padded extra-batch-dimension and
//!   routing-table reindexing),
//! - DP-SGD mechanics: per-sample clipping, Gaussian noising, DP-AdamW,
//! - an RDP accountant for the subsampled Gaussian mechanism with noise
//!   calibration,
//! - a deterministic single-process simulation of expert parallelism,
//! - a trainer CLI over synthetic classification tasks.
//!
//! Batch-level loops run on rayon when the `parallel` feature (default) is
//! enabled and fall back to sequential execution otherwise; results are
//! identical either way.

pub mod accountant;
pub mod error;
pub mod exec;
pub mod model;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
