//! Stochastic-approximation EM with Langevin E-steps.
//!
//! The crate is organised bottom-up: [`model`] defines the interface every
//! latent-variable model implements, [`mcmc`] provides the unadjusted and
//! Metropolis-adjusted Langevin kernels, and [`saem`] drives the
//! stochastic-approximation recursion. [`models`] holds the concrete
//! problems, [`eval`] the predictive evaluation, and [`diagnostics`] the
//! stepsize-bias tools.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod mcmc;
pub mod model;
pub mod models;
pub mod par;
pub mod rng;
pub mod saem;

pub use error::{Error, Result};
pub use model::{Latent, Model, Params, SufficientStats};
