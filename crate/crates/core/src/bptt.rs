//! Short-horizon analytic policy gradient through the differentiable
//! dynamics, used to derive a temporary exploratory policy.
//!
//! The loss over `N` lanes and horizon `h` is
//!
//! ```text
//! L = -1/(N h) * sum_i [ sum_{t<k_i} gamma^t r(s_t, a_t) + gamma^{k_i} V(s_{k_i}) ]
//! ```
//!
//! where `k_i = h` unless lane `i` ended early. The backward pass walks each
//! lane from its last state to the first carrying the adjoint `dL/ds_t`.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::diffenv::{Dynamics, EnvState};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::nets::{
    adam_step, clip_grad_norm, policy_backward_into, policy_forward, sample_reparam, value_backward, value_forward,
    AdamConfig, AdamState, MlpParams,
};

/// One simulated (or padded) step of an APG lane.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub state: Vec<f64>,
    /// Sampled action before clipping.
    pub raw_action: Vec<f64>,
    /// Action actually applied to the environment.
    pub action: Vec<f64>,
    pub noise: Vec<f64>,
    pub reward: f64,
    /// The lane had already ended; this record is padding with zero reward.
    pub truncated: bool,
    pub jac_f_s: Mat,
    pub jac_f_a: Mat,
    pub grad_r_s: Vec<f64>,
    pub grad_r_a: Vec<f64>,
}

impl StepRecord {
    pub fn clipped(&self) -> bool {
        self.raw_action != self.action
    }
}

#[derive(Debug, Clone)]
pub struct LaneTape {
    pub start: EnvState,
    pub steps: Vec<StepRecord>,
    /// State whose value closes the objective.
    pub terminal: Vec<f64>,
    /// Number of real (non-padding) steps.
    pub steps_taken: usize,
    /// Lane stopped on the environment's termination predicate.
    pub terminated: bool,
}

#[derive(Debug, Clone)]
pub struct ApgTape {
    pub lanes: Vec<LaneTape>,
    pub horizon: usize,
    pub gamma: f64,
}

impl ApgTape {
    pub fn n_agents(&self) -> usize {
        self.lanes.len()
    }

    /// Recomputes the loss from recorded rewards and the given critic.
    pub fn loss(&self, critic: &MlpParams) -> Result<f64> {
        let scale = 1.0 / (self.lanes.len() * self.horizon) as f64;
        let mut total = 0.0;
        for lane in &self.lanes {
            let mut disc = 1.0;
            for rec in &lane.steps[..lane.steps_taken] {
                total += disc * rec.reward;
                disc *= self.gamma;
            }
            total += disc * value_forward(critic, &lane.terminal)?;
        }
        Ok(-scale * total)
    }

    pub fn any_clipped(&self) -> bool {
        self.lanes.iter().any(|l| l.steps[..l.steps_taken].iter().any(StepRecord::clipped))
    }
}

fn check_rollout_args(n_agents: usize, horizon: usize, gamma: f64) -> Result<()> {
    if n_agents == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("APG rollout needs N >= 1 and h >= 1".into()));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must be in (0, 1], got {gamma}")));
    }
    Ok(())
}

/// Rolls the policy out for `horizon` steps from `n_agents` fresh resets,
/// recording everything the backward pass needs. Returns the tape and the loss.
pub fn apg_rollout<D: Dynamics + ?Sized>(
    env: &D,
    policy: &MlpParams,
    critic: &MlpParams,
    n_agents: usize,
    horizon: usize,
    gamma: f64,
    rng: &mut dyn RngCore,
) -> Result<(ApgTape, f64)> {
    check_rollout_args(n_agents, horizon, gamma)?;
    let dim_a = env.dim_a();
    let dim_s = env.dim_s();
    let mut lanes = Vec::with_capacity(n_agents);
    for _ in 0..n_agents {
        let start = env.reset(rng);
        let mut state = start.clone();
        let mut steps = Vec::with_capacity(horizon);
        let mut steps_taken = 0;
        let mut terminated = false;
        for _ in 0..horizon {
            let noise: Vec<f64> = (0..dim_a).map(|_| StandardNormal.sample(rng)).collect();
            if state.done {
                steps.push(StepRecord {
                    state: state.sim.clone(),
                    raw_action: vec![0.0; dim_a],
                    action: vec![0.0; dim_a],
                    noise,
                    reward: 0.0,
                    truncated: true,
                    jac_f_s: Mat::zeros(dim_s, dim_s),
                    jac_f_a: Mat::zeros(dim_s, dim_a),
                    grad_r_s: vec![0.0; dim_s],
                    grad_r_a: vec![0.0; dim_a],
                });
                continue;
            }
            let out = policy_forward(policy, &state.sim)?;
            let raw_action = sample_reparam(&out, &noise);
            let action = env.clip_action(&raw_action);
            let step = env.step(&state, &action)?;
            steps.push(StepRecord {
                state: state.sim.clone(),
                raw_action,
                action,
                noise,
                reward: step.reward,
                truncated: false,
                jac_f_s: step.jac_f_s,
                jac_f_a: step.jac_f_a,
                grad_r_s: step.grad_r_s,
                grad_r_a: step.grad_r_a,
            });
            steps_taken += 1;
            terminated = step.terminated;
            state = step.next;
        }
        lanes.push(LaneTape {
            start,
            steps,
            terminal: state.sim,
            steps_taken,
            terminated,
        });
    }

    let tape = ApgTape { lanes, horizon, gamma };
    for lane in &tape.lanes {
        if let Some(t) = lane.steps.iter().position(|r| !r.reward.is_finite()) {
            return Err(Error::NumericalFailure { what: "APG reward", index: t });
        }
    }
    let loss = tape.loss(critic)?;
    if !loss.is_finite() {
        return Err(Error::NumericalFailure {
            what: "APG loss",
            index: horizon,
        });
    }
    Ok((tape, loss))
}

/// Gradient of the tape's loss with respect to the policy parameters.
///
/// Clipping is treated as the identity in the backward pass. Lanes that hit
/// a terminal state contribute no value gradient at that state.
pub fn apg_backward(tape: &ApgTape, policy: &MlpParams, critic: &MlpParams) -> Result<MlpParams> {
    let n = tape.lanes.len();
    let h = tape.horizon;
    if n == 0 || h == 0 {
        return Err(Error::InvalidArgument("empty tape".into()));
    }
    let scale = 1.0 / (n * h) as f64;
    let gamma = tape.gamma;
    let mut grad = policy.zeros_like();
    for lane in &tape.lanes {
        let k = lane.steps_taken;
        let mut adj_s = if lane.terminated {
            vec![0.0; lane.terminal.len()]
        } else {
            let coeff = -gamma.powi(k as i32) * scale;
            value_backward(critic, &lane.terminal, coeff)?.1
        };
        for t in (0..k).rev() {
            let rec = &lane.steps[t];
            let w = -gamma.powi(t as i32) * scale;
            let mut adj_a = rec.jac_f_a.vt_mul(&adj_s);
            for (g, r) in adj_a.iter_mut().zip(&rec.grad_r_a) {
                *g += w * r;
            }
            let mut next_adj = rec.jac_f_s.vt_mul(&adj_s);
            for (g, r) in next_adj.iter_mut().zip(&rec.grad_r_s) {
                *g += w * r;
            }
            let through_policy = policy_backward_into(policy, &rec.state, &rec.noise, &adj_a, &mut grad)?;
            for (g, p) in next_adj.iter_mut().zip(&through_policy) {
                *g += p;
            }
            if next_adj.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericalFailure {
                    what: "APG state adjoint",
                    index: t,
                });
            }
            adj_s = next_adj;
        }
    }
    if !grad.all_finite() {
        return Err(Error::NumericalFailure {
            what: "APG policy gradient",
            index: 0,
        });
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApgConfig {
    pub n_agents: usize,
    pub horizon: usize,
    pub epochs: usize,
    pub lr: f64,
    pub gamma: f64,
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct ExploreOutcome {
    pub params: MlpParams,
    /// Environment steps spent on APG rollouts (`N * h` per attempted epoch).
    pub env_steps: usize,
    pub loss_trace: Vec<f64>,
    /// Set when an epoch failed numerically; `params` is then an unmodified
    /// copy of the primary policy.
    pub failure: Option<Error>,
}

/// Copies the primary policy and improves the copy with `cfg.epochs` APG
/// steps using a fresh Adam state. The primary policy is never modified.
pub fn make_exploratory_policy<D: Dynamics + ?Sized>(
    primary: &MlpParams,
    critic: &MlpParams,
    env: &D,
    cfg: &ApgConfig,
    rng: &mut dyn RngCore,
) -> ExploreOutcome {
    let mut params = primary.clone();
    let mut adam = AdamState::new(&params);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut env_steps = 0;
    for _ in 0..cfg.epochs {
        env_steps += cfg.n_agents * cfg.horizon;
        let step = apg_rollout(env, &params, critic, cfg.n_agents, cfg.horizon, cfg.gamma, rng).and_then(|(tape, loss)| {
            let mut grad = apg_backward(&tape, &params, critic)?;
            clip_grad_norm(&mut grad, cfg.max_grad_norm);
            adam_step(&mut params, &mut adam, &grad, cfg.lr, AdamConfig::default())?;
            params.clamp_log_std();
            Ok(loss)
        });
        match step {
            Ok(loss) => loss_trace.push(loss),
            Err(e) => {
                return ExploreOutcome {
                    params: primary.clone(),
                    env_steps,
                    loss_trace,
                    failure: Some(e),
                }
            }
        }
    }
    ExploreOutcome {
        params,
        env_steps,
        loss_trace,
        failure: None,
    }
}

/// Concave quadratic `J(theta) = -(L/2) |theta|^2` probed with one gradient
/// ascent step of size `step_size` from `theta_0 = (1, ..., 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticObjective {
    pub curvature: f64,
    pub step_size: f64,
    pub dim: usize,
}

impl QuadraticObjective {
    fn value(&self, theta: &[f64]) -> f64 {
        -0.5 * self.curvature * theta.iter().map(|x| x * x).sum::<f64>()
    }

    /// `J(theta_1) - J(theta_0)` after one ascent step.
    pub fn improvement(&self) -> f64 {
        let theta0 = vec![1.0; self.dim.max(1)];
        let theta1: Vec<f64> = theta0
            .iter()
            .map(|&x| x + self.step_size * (-self.curvature * x))
            .collect();
        self.value(&theta1) - self.value(&theta0)
    }
}

/// True iff one gradient-ascent step strictly improves the objective.
pub fn verify_ascent_improvement(q: &QuadraticObjective) -> bool {
    q.improvement() > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascent_examples() {
        let q = |eta| QuadraticObjective { curvature: 2.0, step_size: eta, dim: 3 };
        assert!(verify_ascent_improvement(&q(0.5)));
        assert!(!verify_ascent_improvement(&q(1.5)));
        let mid = q(0.5);
        // |grad J|^2 = L^2 * dim at theta_0 = 1; improvement = |grad|^2 / (2L).
        let grad_sq = 4.0 * 3.0;
        assert!((mid.improvement() - grad_sq / 4.0).abs() < 1e-12);
    }
}
