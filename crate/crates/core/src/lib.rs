//! Regression trees whose categorical splits are solved exactly.
//!
//! The variance-reduction criterion for a categorical split is a ratio of two
//! quadratic forms over a class-membership bit vector. Dinkelbach's parametric
//! method turns that ratio into a short sequence of QUBO problems, each solved
//! by Gray-code enumeration (small category counts) or seeded simulated
//! annealing (large ones).
//!
//! Module map:
//!
//! - [`data`]: datasets, CSV ingestion, partitioning, synthetic generators
//! - [`stats`]: sufficient statistics and the pairwise V-matrix
//! - [`qubo`]: QUBO assembly and the fractional parts n(q), d(q)
//! - [`solver`]: exhaustive and annealing QUBO minimizers
//! - [`dinkelbach`]: the λ iteration
//! - [`split`]: per-variable split search and categorical oracles
//! - [`tree`]: growing, prediction, routing, serialization
//! - [`pruning`]: weakest-link pruning, validation selection, evaluation protocol

pub mod data;
pub mod dinkelbach;
mod error;
pub mod pruning;
pub mod qubo;
pub mod rng;
pub mod solver;
pub mod split;
pub mod stats;
pub mod tree;

pub use error::{Error, Result};
