//! PPO on a source-tagged, possibly mixed-policy dataset.
//!
//! Each transition stores the log-density of the action under the policy
//! that generated it. The ratio `pi_theta(a|s) / pi_behavior(a|s)` therefore
//! uses the primary or exploratory policy as denominator depending on where
//! the sample came from, without keeping the exploratory policy around.

mod gae;
mod loss;
mod rollout;
mod update;

pub use gae::{compute_gae, gae_lane};
pub use loss::{ppo_policy_loss, ratios, value_loss, value_loss_on_batch, PolicySample};
pub use rollout::{collect_from_lanes, collect_rollout, Lane, RolloutBatch, Source, Transition};
pub use update::{ppo_update, PpoConfig, PpoOptim, UpdateStats};
