//! Differentiable driving micro-simulator with analytic world-model training.
//!
//! The crate provides an invertible kinematic bicycle model with hand-written
//! vector-Jacobian products, a small reverse-mode tape over a fixed primitive
//! set, a recurrent agent network with policy and state-predictor heads,
//! a synthetic scenario suite, training losses, trajectory metrics and a
//! sampling model-predictive controller.

pub mod autodiff;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod losses;
pub mod metrics;
pub mod mpc;
pub mod nn;
pub mod parallel;
pub mod render;
pub mod scenario;
pub mod seeding;
pub mod train;

pub use error::{Error, Result};
