use super::rollout::RolloutBatch;
use crate::error::{Error, Result};

/// Generalized advantage estimates for one lane, computed backwards.
///
/// `done[t]` cuts the recursion with no bootstrap; `truncated[t]` cuts it and
/// bootstraps from `bootstrap[t]`. The last transition must be one or the other.
pub fn gae_lane(
    rewards: &[f64],
    values: &[f64],
    done: &[bool],
    truncated: &[bool],
    bootstrap: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let n = rewards.len();
    if [values.len(), done.len(), truncated.len(), bootstrap.len()].iter().any(|&l| l != n) {
        return Err(Error::InvalidArgument("GAE inputs have different lengths".into()));
    }
    if n > 0 && !done[n - 1] && !truncated[n - 1] {
        return Err(Error::InvalidState("lane does not end on a segment boundary".into()));
    }
    let mut adv = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let (next_value, next_adv) = if done[t] {
            (0.0, 0.0)
        } else if truncated[t] {
            (bootstrap[t], 0.0)
        } else {
            (values[t + 1], carry)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        carry = delta + gamma * lambda * next_adv;
        adv[t] = carry;
    }
    Ok(adv)
}

/// Fills `advantages` and `returns = advantages + values` from the values
/// already stored on the transitions.
pub fn compute_gae(batch: &mut RolloutBatch, gamma: f64, lambda: f64) -> Result<()> {
    let mut advantages = Vec::with_capacity(batch.len());
    for i in 0..batch.n_envs {
        let lane = batch.lane(i);
        let mut values = Vec::with_capacity(lane.len());
        let mut bootstrap = Vec::with_capacity(lane.len());
        for tr in lane {
            values.push(tr.value.ok_or_else(|| Error::InvalidState("transition has no value estimate".into()))?);
            bootstrap.push(if tr.truncated {
                tr.bootstrap_value
                    .ok_or_else(|| Error::InvalidState("truncated transition has no bootstrap value".into()))?
            } else {
                0.0
            });
        }
        let rewards: Vec<f64> = lane.iter().map(|t| t.reward).collect();
        let done: Vec<bool> = lane.iter().map(|t| t.done).collect();
        let truncated: Vec<bool> = lane.iter().map(|t| t.truncated).collect();
        advantages.extend(gae_lane(&rewards, &values, &done, &truncated, &bootstrap, gamma, lambda)?);
    }
    let returns = advantages
        .iter()
        .zip(&batch.transitions)
        .map(|(a, t)| a + t.value.unwrap())
        .collect();
    batch.advantages = Some(advantages);
    batch.returns = Some(returns);
    Ok(())
}
