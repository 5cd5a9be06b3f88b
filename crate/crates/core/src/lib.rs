//! Streaming identification of linear dynamical systems `X_{t+1} = A* X_t + noise`.
//!
//! The crate implements stochastic gradient descent with reverse experience
//! replay (SGD-RER) alongside the usual baselines (forward SGD, SGD with random
//! experience replay and online least squares), a VAR(1) simulator, the two
//! error metrics used to compare them, and an experiment harness that drives
//! multi-seed comparisons and writes CSV results.

pub mod error;
pub mod estimators;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod replay;

pub use error::{Error, Result};
pub use numerics::{Matrix, Vector};
