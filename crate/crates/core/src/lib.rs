//! Foundation-model toolkit for the Montreal capacitated vehicle routing problem.
//!
//! Every instance is a sampled subgraph of one fixed city graph. A cheap
//! teacher heuristic labels instances, a transformer encoder-decoder learns the
//! node-ID sequence of those labels, and feasibility-masked autoregressive
//! decoding turns the trained model back into routes.
//!
//! Module map:
//!
//! - [`graph`]: fixed graph, instances, solutions, token features
//! - [`datagen`]: graph construction, instance sampling, curriculum datasets
//! - [`teacher`]: Clarke-Wright + local search, exact oracle for tiny instances
//! - [`tensor`]: dense tensors, reverse-mode tape, AdamW, gradient checks
//! - [`model`]: encoder-decoder transformer, feasibility mask, dual loss
//! - [`train`]: schedules, batching, phased training, checkpoints
//! - [`decode`]: greedy and nucleus decoding, best-of-s
//! - [`eval`]: gaps, percentiles, wins, paired t-test, report export
//! - [`config`] / [`pipeline`]: run configuration and end-to-end orchestration

pub mod checks;
pub mod config;
pub mod datagen;
pub mod decode;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod teacher;
pub mod tensor;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use graph::{FixedGraph, ProblemInstance, Solution, ValidationReport, Violation};
pub use model::{ModelConfig, ModelParams};
pub use tensor::{Scalar, Tensor};
