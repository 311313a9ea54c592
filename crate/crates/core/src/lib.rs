//! Build concept bottleneck models on top of a frozen text classifier.
//!
//! The backbone is never run here. Everything starts from precomputed
//! embeddings plus the classifier head that sat on top of them, and the rest
//! is linear algebra: concept activation vectors, importance and
//! identifiability scoring, coverage-driven bottleneck initialization,
//! penalized training with a parallel residual layer, and a completeness
//! test that decides when the bottleneck has enough concepts.
//!
//! Module map:
//!
//! * [`data`] embeddings, classifier heads and concept matrices on disk.
//! * [`bank`] micro-to-macro concept clustering and bottleneck seeding.
//! * [`cluster`] PCA reduction and HDBSCAN over arbitrary distances.
//! * [`geometry`] CAVs, median thresholds and linear identifiability.
//! * [`importance`] CIG, TCAV, frequency and random concept scores.
//! * [`model`] / [`train`] the bottleneck model, its loss and optimizer.
//! * [`pipeline`] iterative bottleneck growth and stopping rules.
//! * [`eval`] metrics, interventions and global explanations.
//! * [`synth`] planted-concept fixtures for end-to-end checks.

pub mod bank;
pub mod cluster;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod importance;
pub mod json;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
