//! Command-line harness for the hybrid-memory world model: dataset
//! generation, training with resumable checkpoints, sampling, evaluation
//! and ablation suites.

pub mod analysis;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod image;
pub mod parallel;
pub mod train;
