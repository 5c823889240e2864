//! Relation-aware graph-over-graph encoder for visual dialog.
//!
//! Three relation graphs are built per dialog round (coreference links
//! between history turns, dependency arcs between question words, spatial
//! relations between image regions) and run through a label-biased graph
//! attention operator in a fixed order: history, then the history-aware
//! question graph, then the question-aware image graph. The resulting
//! node states are fused into a joint vector that feeds a generative and a
//! discriminative answer-ranking decoder.

pub mod corpus;
pub mod error;
pub mod graphs;
pub mod model;
pub mod parallel;
pub mod tensor;
pub mod train;

pub use error::{GogError, Result};
