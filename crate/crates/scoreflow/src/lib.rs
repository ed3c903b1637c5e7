//! Probability-flow ODE sampling for diffusion models, with computable
//! Wasserstein-2 error bounds for weakly log-concave targets.
//!
//! The crate is organised bottom-up:
//!
//! * [`schedule`]: forward noise schedules and their closed-form integrals.
//! * [`target`]: Gaussian-mixture targets, exact scores, regularity constants.
//! * [`concavity`]: propagation of weak log-concavity along the forward flow.
//! * [`sampler`]: the exponential-integrator ODE sampler and a reference flow.
//! * [`bounds`]: the three-term error bound and its auxiliary constants.
//! * [`hyperparams`]: planning horizon, step size and score accuracy.
//! * [`metrics`]: Wasserstein-2 estimators.

pub mod bounds;
pub mod concavity;
pub mod error;
pub mod hyperparams;
pub mod metrics;
pub mod numeric;
pub(crate) mod rng;
pub mod sampler;
pub mod schedule;
pub mod target;

pub use error::{Error, Result};
