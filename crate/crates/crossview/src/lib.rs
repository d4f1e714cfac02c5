//! Cross-view relational detection on paired-view candidate sets.
//!
//! Candidate detections in one view attend to the candidates of a paired
//! view through gated scaled-dot-product affinities: a visual similarity
//! term and a non-negative geometric gate computed from sinusoidally
//! embedded, normalized box geometry. The aggregated relational feature is
//! added residually and the blocks stack in both directions. Around that
//! core the crate provides classification/regression heads with a weighted
//! four-term loss, hand-derived gradients verified by central differences,
//! a synthetic paired-view benchmark generator, deterministic SGD training,
//! and FROC-style detection evaluation.
//!
//! See the `examples/` directory for one runnable walkthrough per
//! capability, and the `crossview` binary for the file-level workflow
//! (`generate`, `train`, `gradcheck`, `eval`, `ablate`).

pub mod cli;
pub mod error;
pub mod grad;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod relation;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
