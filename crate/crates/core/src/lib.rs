//! Transductive transfer-learning toolkit for unlabeled-domain image
//! classification.
//!
//! The pipeline trains a target-domain classifier with zero target labels by
//! jointly optimizing an unpaired two-generator / two-discriminator
//! translation network together with a frozen source-domain classifier and a
//! trainable target-domain classifier. Everything runs on the CPU with a
//! small, deterministic layer engine; fixed seeds give bit-identical runs.

pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod report;
pub mod rng;
pub mod trainer;
pub mod types;

pub use config::{ExperimentConfig, LossWeights};
pub use error::{Error, Result};
pub use rng::SeedStreams;
pub use types::{Domain, ImageChip, TensorBatch};
