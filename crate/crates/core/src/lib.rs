//! Stepwise covariance selection for high-dimensional Gaussian graphical models.
//!
//! The crate estimates the conditional-dependence graph of a multivariate
//! normal sample by adding and pruning edges according to correlations
//! between node-wise regression residuals. Around that estimator it provides
//! synthetic ground-truth generators, K-fold threshold selection, recovery and
//! estimation metrics, an LDA classification pipeline and a replicated
//! benchmark runner.
//!
//! Module map:
//!
//! - [`linalg`]: least squares, Pearson correlation, Cholesky-based kernels.
//! - [`model`]: AR(1), nearest-neighbour and block ground truths plus sampling.
//! - [`gsa`]: the forward/backward stepwise estimator.
//! - [`cv`]: fold plans, validation prediction and threshold grid search.
//! - [`metrics`]: confusion counts, MCC, Frobenius and Kullback-Leibler losses.
//! - [`classify`]: t-test screening, standardisation and LDA.
//! - [`bench`]: replicated campaigns with CSV/JSON reporting.
//! - [`io`]: canonical JSON and CSV formats shared by the CLI.

pub mod bench;
pub mod classify;
pub mod cv;
pub mod error;
pub mod gsa;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;

pub use error::{Error, Result};
pub use gsa::{run_gsa, GsaFit, NeighborhoodSystem, Thresholds};
pub use linalg::{DenseMatrix, Vector};
pub use model::{EdgeSet, PrecisionModel, SampleSet};

/// Name of the pseudo-random generator behind every seeded routine.
pub const RNG_NAME: &str = "ChaCha20Rng (rand_chacha 0.9, seed_from_u64)";
