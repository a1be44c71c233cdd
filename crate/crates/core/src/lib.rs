//! Fast retraining for small feed-forward networks.
//!
//! Each general epoch runs two steps:
//!
//! 1. SGD over the training set where only a random subset of the
//!    convolutional layers (a fraction `r_a` that follows a step schedule)
//!    receives gradients; the others still run forward but are frozen.
//! 2. The dense layers are refit from last to first with a ridge-regularized
//!    Moore-Penrose update. The least-squares system is streamed in fixed-size
//!    row batches and solved recursively with the Sherman-Morrison-Woodbury
//!    identity, so the full feature matrix never has to be materialized.
//!
//! Modules:
//!
//! - [`linalg`]: `Mat`, factorizations, one-shot and recursive ridge solvers
//! - [`retrain`]: residual pullback and dense-layer retraining
//! - [`scheduler`]: activation-rate schedules and per-epoch freeze plans
//! - [`network`]: a from-scratch conv + dense network with SGD and checkpoints
//! - [`data`]: IDX/CSV loaders, synthetic generators, seeded batching
//! - [`config`]: run configuration parsing and validation

// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod linalg;
pub mod network;
pub mod retrain;
pub mod scheduler;

pub use error::{Error, Result};
pub use linalg::{Mat, RlsState};
