//! On-policy training with analytic-gradient directed exploration.
//!
//! A PPO learner whose rollout data is augmented with trajectories from a
//! short-lived exploratory policy. The exploratory policy is a copy of the
//! primary policy improved for a few steps by backpropagating rewards
//! through differentiable dynamics ([`bptt`]), used for data collection,
//! and discarded.

pub mod bptt;
pub mod diffenv;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod nets;
pub mod ppo;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
