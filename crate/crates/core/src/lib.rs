//! Random-timestep Euler integration and the stochastic Euler dynamics.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`]: small dense matrices, matrix exponential, eigenvalues.
//! * [`randomness`]: reproducible per-sample random streams and samplers.
//! * [`ode`]: problem definitions and reference solutions.
//! * [`sed`], [`sed2`]: first- and second-order stochastic Euler dynamics.
//! * [`ded`]: the deterministic Euler dynamics.
//! * [`stability`]: closed-form stability thresholds and Lyapunov constants.
//! * [`montecarlo`]: estimators, slope fits and statistical tests.

// Negated comparisons such as `!(x > 0.0)` also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ded;
pub mod error;
pub mod linalg;
pub mod montecarlo;
pub mod ode;
pub mod randomness;
pub mod sed;
pub mod sed2;
pub mod stability;

pub use error::{Error, Result};
