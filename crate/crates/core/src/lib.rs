//! Numerical laboratory for linear self-attention on autoregressive data.
//!
//! * [`stochastic`]: stable AR(p) processes, autocovariances, sampling, estimators.
//! * [`hankel`]: Hankel inputs, the masked Gram matrix, cubic features.
//! * [`attention`]: linear and softmax attention, layered stacks, training.
//! * [`moments`]: Isserlis pairings and exact or Monte Carlo lifted moments.
//! * [`gap`]: the Schur-complement gap, rate fits, uniform and multi-layer gaps.
//! * [`rollout`]: chain-of-thought rollouts and horizon metrics.

pub mod attention;
pub mod error;
pub mod gap;
pub mod hankel;
pub mod linalg;
pub mod moments;
pub mod rng;
pub mod rollout;
pub mod stochastic;

pub use error::{Error, Result};
