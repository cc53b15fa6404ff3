//! Cross-modal voice-face metric learning engine.
//!
//! The crate trains and evaluates a shared embedding space in which voice
//! recordings and face images of the same person land close together. It is
//! organized as a pipeline of small, independently testable pieces:
//!
//! - [`metric`]: the scaled, L2-normalized embedding space and its two
//!   interchangeable similarity measures.
//! - [`embedder`]: per-modality affine/rectifier networks that map raw
//!   feature vectors into the shared space, plus checkpoint (de)serialization.
//! - [`sampling`]: identity-grouped triplet batch construction and the
//!   random-tuple mining baseline.
//! - [`training`]: voice-anchored triplet loss, exact batch gradients, and
//!   the SGD/Adam training loop with a step-wise learning-rate schedule.
//! - [`confidence`]: the test-design confidence score that makes matching
//!   accuracies comparable across differently sized benchmarks.
//! - [`evaluation`]: 1:n matching, retrieval with mean average precision,
//!   multi-sample (joint) embeddings, per-identity probes, and dataset
//!   splitting protocols.
//! - [`synthetic`]: a latent-factor generator that produces paired
//!   voice/face features with controllable cross-modal correlation, noise,
//!   gender offset, and population shift.
//! - [`segment`]: greedy grow-and-emit segment detection over frame streams.
//!
//! Everything is deterministic under explicit seeds. Batch-level loops run
//! in parallel when the `parallel` feature (default) is enabled, and every
//! reduction happens in a fixed order, so results are bit-identical across
//! thread counts and across the parallel/sequential builds.

pub mod confidence;
pub mod dataset;
pub mod embedder;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod metric;
pub mod sampling;
pub mod seeds;
pub mod segment;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
