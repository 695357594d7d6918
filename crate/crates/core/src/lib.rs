//! Bayesian modular and multiscale regression.
//!
//! The regression coefficient on a finely sampled predictor is decomposed into
//! coarse-to-fine contributions `beta_K = L_1 theta_1 + ... + L_K theta_K`.
//! Each contribution is fitted by its own module on the residuals left by the
//! coarser modules, and the product of the module posteriors forms the
//! modular posterior.

pub mod conjugate;
pub mod error;
pub mod multiscale;
pub mod partition;
pub mod sampler;
pub mod simgen;

pub use error::{BmmsError, Result};
