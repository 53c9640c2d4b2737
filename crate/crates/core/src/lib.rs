//! Hybrid-memory video world model at desk scale.
//!
//! * [`graph`] / [`tensor`]: double-precision tensors with reverse-mode autodiff.
//! * [`sim`]: procedural 2D worlds with moving subjects, back-and-forth camera
//!   tracks and exit–entry annotations.
//! * [`codec`]: lossless space-time patchification standing in for a video VAE.
//! * [`model`]: camera-conditioned DiT with memory tokenization and dynamic
//!   retrieval attention, plus FOV-overlap and dense-concatenation baselines.
//! * [`trainer`]: flow-matching objective, Adam, Euler sampler.
//! * [`metrics`]: PSNR, SSIM and dynamic subject consistency.
//! * [`data`] / [`eval`]: clip-to-example preparation, prediction and scoring.

pub mod codec;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod sim;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
