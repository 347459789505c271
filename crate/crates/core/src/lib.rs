//! Unsupervised domain adaptation under generalized target shift.
//!
//! A source encoder is trained on labeled source data and frozen. A residual
//! map then pushes encoded source samples onto the target latent distribution
//! while staying close to the identity, target label proportions are estimated
//! from a confusion matrix, and a target classifier is trained on the mapped,
//! reweighted source samples. Exact discrete optimal transport solvers serve
//! as oracles for the generalization-bound terms and assumption diagnostics.
//!
//! Module map:
//!
//! - [`nncore`]: dense networks with manual backpropagation and Adam.
//! - [`ot`]: exact transport oracles, Wasserstein critic, transport cost.
//! - [`labelshift`]: confusion-based label proportion estimation.
//! - [`pipeline`]: the training orchestration.
//! - [`data`]: synthetic benchmarks, imbalance subsampling, CSV ingestion.
//! - [`eval`]: metrics, bound terms, assumption diagnostics.
//! - [`cli`]: the `ostar` command-line front end.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod labelshift;
pub mod nncore;
pub mod ot;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
