//! Feature-conditioned Bayesian tensor factorization for predicting
//! per-image enhancement parameter sets.
//!
//! The model treats (image, enhancement version, parameter) triples as a
//! partially observed third-order tensor of offsets from each image's
//! original parameters, factorizes it with Gibbs-sampled CP factors, and
//! couples the per-image factors to visual features through a row-sparse
//! linear map so that unseen images can be scored from features alone.
//!
//! Module map:
//! - [`matrix`]: dense row-major matrices, Cholesky/Jacobi factorizations,
//!   CSV round-tripping.
//! - [`rng`]: hierarchical deterministic stream addressing, so results are
//!   bitwise reproducible regardless of scheduling.
//! - [`sampling`]: multivariate normal and Wishart draws.
//! - [`gw`]: Gaussian-Wishart conjugate updates for factor hyperpriors.
//! - [`l21`]: the row-sparse feature-coupling solver.
//! - [`tensor`]: dense and masked third-order tensors.
//! - [`model`]: the Gibbs sampler, prediction, and model persistence.
//! - [`baselines`]: matrix-factorization, regression, and neighbor baselines.
//! - [`synthetic`]: the synthetic benchmark generator.
//! - [`metrics`]: shared numeric helpers (CP inner product, RMSE, norms).

pub mod baselines;
pub mod error;
pub mod gw;
pub mod l21;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod synthetic;
pub mod rng;
pub mod sampling;
pub mod tensor;

pub use error::{Error, Result};
