use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::diffenv::{Dynamics, EnvState};
use crate::error::{Error, Result};
use crate::nets::{log_prob, policy_forward, sample_reparam, value_forward, MlpParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Primary,
    Explore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    /// The sampled action before clipping.
    pub action: Vec<f64>,
    pub reward: f64,
    /// The environment reached a terminal state (no bootstrap).
    pub done: bool,
    /// The segment was cut without termination (episode cap or end of the
    /// rollout window); the advantage recursion bootstraps from `bootstrap_value`.
    pub truncated: bool,
    pub behavior_log_prob: f64,
    pub value: Option<f64>,
    pub bootstrap_value: Option<f64>,
    /// Successor observation, kept only for truncated transitions.
    pub next_obs: Option<Vec<f64>>,
    pub source: Source,
}

/// Transitions laid out lane-major: lane `i` occupies
/// `transitions[i * horizon .. (i + 1) * horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub n_envs: usize,
    pub horizon: usize,
    pub transitions: Vec<Transition>,
    pub advantages: Option<Vec<f64>>,
    pub returns: Option<Vec<f64>>,
    /// Undiscounted returns of episodes that finished inside this batch.
    pub episode_returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn lane(&self, i: usize) -> &[Transition] {
        &self.transitions[i * self.horizon..(i + 1) * self.horizon]
    }

    /// Concatenates lanes of two batches with equal horizons.
    pub fn merge(mut self, other: RolloutBatch) -> Result<RolloutBatch> {
        if self.n_envs > 0 && other.n_envs > 0 && self.horizon != other.horizon {
            return Err(Error::InvalidArgument("cannot merge batches with different horizons".into()));
        }
        if self.n_envs == 0 {
            return Ok(other);
        }
        if self.advantages.is_some() || other.advantages.is_some() {
            return Err(Error::InvalidState("merge before computing advantages".into()));
        }
        self.n_envs += other.n_envs;
        self.transitions.extend(other.transitions);
        self.episode_returns.extend(other.episode_returns);
        Ok(self)
    }

    /// Re-evaluates `value` and `bootstrap_value` with `critic`.
    pub fn refresh_values(&mut self, critic: &MlpParams) -> Result<()> {
        for tr in self.transitions.iter_mut() {
            tr.value = Some(value_forward(critic, &tr.obs)?);
            if tr.truncated {
                let next = tr
                    .next_obs
                    .as_ref()
                    .ok_or_else(|| Error::InvalidState("truncated transition without successor".into()))?;
                tr.bootstrap_value = Some(value_forward(critic, next)?);
            }
        }
        self.advantages = None;
        self.returns = None;
        Ok(())
    }

    pub fn indices_of(&self, source: Source) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.transitions[i].source == source).collect()
    }

    /// Mean advantage over one source, `None` if that source is absent or
    /// advantages are not computed yet.
    pub fn mean_advantage(&self, source: Source) -> Option<f64> {
        let adv = self.advantages.as_ref()?;
        let idx = self.indices_of(source);
        if idx.is_empty() {
            return None;
        }
        Some(idx.iter().map(|&i| adv[i]).sum::<f64>() / idx.len() as f64)
    }
}

/// A persistent environment lane.
#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub state: EnvState,
    pub episode_return: f64,
}

impl Lane {
    pub fn fresh<D: Dynamics + ?Sized>(env: &D, rng: &mut dyn RngCore) -> Self {
        Self {
            state: env.reset(rng),
            episode_return: 0.0,
        }
    }
}

/// Collects `horizon` transitions from each of `n_envs` freshly reset lanes.
pub fn collect_rollout<D: Dynamics + ?Sized>(
    env: &D,
    policy: &MlpParams,
    critic: Option<&MlpParams>,
    n_envs: usize,
    horizon: usize,
    rng: &mut dyn RngCore,
    source: Source,
) -> Result<RolloutBatch> {
    let mut lanes: Vec<Lane> = (0..n_envs).map(|_| Lane::fresh(env, rng)).collect();
    collect_from_lanes(env, policy, critic, &mut lanes, horizon, rng, source)
}

/// Continues the given lanes for `horizon` steps each, auto-resetting on
/// episode end. Lanes are processed in order, each to completion.
pub fn collect_from_lanes<D: Dynamics + ?Sized>(
    env: &D,
    policy: &MlpParams,
    critic: Option<&MlpParams>,
    lanes: &mut [Lane],
    horizon: usize,
    rng: &mut dyn RngCore,
    source: Source,
) -> Result<RolloutBatch> {
    if lanes.is_empty() || horizon == 0 {
        return Err(Error::InvalidArgument("rollout needs n_envs >= 1 and T >= 1".into()));
    }
    let dim_a = env.dim_a();
    let mut transitions = Vec::with_capacity(lanes.len() * horizon);
    let mut episode_returns = Vec::new();
    for lane in lanes.iter_mut() {
        for t in 0..horizon {
            let obs = lane.state.sim.clone();
            let out = policy_forward(policy, &obs)?;
            let noise: Vec<f64> = (0..dim_a).map(|_| StandardNormal.sample(rng)).collect();
            let action = sample_reparam(&out, &noise);
            let behavior_log_prob = log_prob(&out, &action);
            let step = env.step(&lane.state, &env.clip_action(&action))?;
            lane.episode_return += step.reward;

            let episode_over = step.next.done;
            let truncated = !step.terminated && (episode_over || t + 1 == horizon);
            let next_obs = truncated.then(|| step.next.sim.clone());
            let value = critic.map(|c| value_forward(c, &obs)).transpose()?;
            let bootstrap_value = match (critic, &next_obs) {
                (Some(c), Some(n)) => Some(value_forward(c, n)?),
                _ => None,
            };
            transitions.push(Transition {
                obs,
                action,
                reward: step.reward,
                done: step.terminated,
                truncated,
                behavior_log_prob,
                value,
                bootstrap_value,
                next_obs,
                source,
            });

            if episode_over {
                episode_returns.push(lane.episode_return);
                *lane = Lane::fresh(env, rng);
            } else {
                lane.state = step.next;
            }
        }
    }
    Ok(RolloutBatch {
        n_envs: lanes.len(),
        horizon,
        transitions,
        advantages: None,
        returns: None,
        episode_returns,
    })
}
