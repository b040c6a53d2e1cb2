//! Deterministic split-learning engine for a mesh of autonomous data domains.
//!
//! A set of domains, each owning a vertical slice of a feature table, jointly
//! trains one neural network with a central consumer. Only cut-layer
//! activations and their gradients ever cross a domain boundary; raw features
//! and (optionally) labels stay with their owners. Because aggregation is
//! plain column concatenation, the distributed run is an exact partition of a
//! single network, and the engine ships the machinery to verify that: train
//! split, train fused, compare parameters bit for bit.
//!
//! Module map:
//!
//! - [`tensor`] / [`rng`] — dense `f64` tensors and a counter-based PRNG; the
//!   determinism substrate everything else stands on.
//! - [`nn`] — layers, stable binary cross-entropy, manual backprop, plain SGD
//!   and a finite-difference gradient checker.
//! - [`protocol`] — the round state machine for both split topologies, the
//!   no-peek audit, and the binary wire format for cross-domain messages.
//! - [`data`] — vertical partitioning, sample alignment, CSV ingestion and
//!   the resampling pipelines (negative sampling, SMOTE, undersampling).
//! - [`metrics`] — top-K ranking metrics and binary classification metrics.
//! - [`experiment`] — config-driven runner for centralized and split
//!   topologies, the domain-diversity sweep, and deterministic reports.

pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod protocol;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::RngState;
pub use tensor::Tensor;
