//! Ensemble data assimilation with the deterministic EnKF (DEnKF) and
//! Bayesian adaptive Schur-product localization.
//!
//! The crate is organised bottom-up:
//!
//! * [`ensemble`]: ensemble containers, statistics, inflation and
//!   observation-space selection.
//! * [`models`]: Lorenz'96, multivariate Lorenz'96 and the 1.5-layer
//!   quasi-geostrophic model behind [`models::ModelSystem`], plus RK4.
//! * [`localization`]: Gaussian taper, mean combiners, group prolongation
//!   and the Schur localization matrix with its radius derivatives.
//! * [`denkf`]: the localized DEnKF analysis in observation space.
//! * [`adaptive`]: gamma priors, the MAP cost and gradient (3D and 4D) and
//!   the projected-gradient minimizer.
//! * [`oracle`]: truth-aware radius selection used as a baseline.
//! * [`harness`]: twin experiments, sweeps and CSV persistence.
//! * [`checks`]: the fast invariant suite behind `adaloc check`.

// `!(x > 0.0)` style guards deliberately reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod checks;
pub mod denkf;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod localization;
pub mod models;
pub mod oracle;

pub use error::{Error, Result};
