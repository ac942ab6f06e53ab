//! Bayesian model selection over subgraphs of a base graph with spike-and-slab Laplacian priors.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bicluster;
pub mod cluster;
pub mod dlpa;
pub mod em;
pub mod error;
pub mod gaussian;
pub mod graph;
pub mod isotonic;
pub mod linalg;
pub mod par;
pub mod selection;
pub mod simulate;

pub use error::{Error, Result};
pub use graph::{ContractionResult, Graph};
pub use par::Execution;

/// Library version recorded in command outputs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
