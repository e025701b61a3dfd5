//! Homophily-adjusted network autocorrelation models.
//!
//! The crate fits network effects and network disturbances models in which
//! latent homophilic features `U` enter the mean alongside observed
//! covariates. Posterior draws of `U` (from the built-in latent-distance
//! sampler or from external software) are summarized by a constrained
//! matrix-normal approximation, `U` is integrated out analytically, and the
//! resulting marginal log posterior is maximized with a box-constrained
//! quasi-Newton method. Classical network autocorrelation models (Bayesian
//! and maximum likelihood) are provided as baselines, together with a
//! simulation harness for bias/MSE/coverage studies.

pub mod error;
pub mod estimation;
pub mod io;
pub mod latent;
pub(crate) mod linalg;
pub mod model;
pub mod net;
pub mod sim;

pub use error::{Error, Result};
