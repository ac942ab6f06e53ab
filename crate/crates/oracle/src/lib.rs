//! Brute-force references.
//!
//! Everything here works from plain edge lists and dense `nalgebra` matrices so the results can be
//! compared against the library without sharing code with it.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dense;
pub mod marginal;
pub mod partition;
pub mod pava;
pub mod report;
pub mod trees;

pub use marginal::{quadrature_marginal, MarginalInput};
pub use partition::exact_log_partition;
pub use pava::pava;
pub use report::{write_csv, OracleReport};
pub use trees::{enumerate_spanning_trees, kirchhoff_count, weighted_tree_logsum};

pub type Edge = (usize, usize);

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("size guard: {0}")]
    TooLarge(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, OracleError>;
