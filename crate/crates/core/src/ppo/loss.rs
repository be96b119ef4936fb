use super::rollout::{RolloutBatch, Source};
use crate::error::{Error, Result};
use crate::nets::{entropy, log_prob, log_prob_backward, policy_forward, value_backward_into, value_forward, MlpParams};

/// One sample of the surrogate objective.
#[derive(Debug, Clone, Copy)]
pub struct PolicySample<'a> {
    pub obs: &'a [f64],
    pub action: &'a [f64],
    pub behavior_log_prob: f64,
    pub advantage: f64,
}

/// Clipped surrogate with entropy bonus:
/// `-mean[min(r A, clip(r, 1-eps, 1+eps) A)] - beta H`, and its gradient.
pub fn ppo_policy_loss(
    policy: &MlpParams,
    samples: &[PolicySample<'_>],
    clip_eps: f64,
    entropy_coef: f64,
) -> Result<(f64, MlpParams)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    let n = samples.len() as f64;
    let mut grad = policy.zeros_like();
    let mut surrogate = 0.0;
    for (k, s) in samples.iter().enumerate() {
        let out = policy_forward(policy, s.obs)?;
        let ratio = (log_prob(&out, s.action) - s.behavior_log_prob).exp();
        if !ratio.is_finite() {
            return Err(Error::NumericalFailure { what: "importance ratio", index: k });
        }
        let unclipped = ratio * s.advantage;
        let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * s.advantage;
        if unclipped <= clipped {
            surrogate += unclipped;
            // d(-r A / n) = -(A r / n) d log pi
            let upstream = -s.advantage * ratio / n;
            if upstream != 0.0 {
                log_prob_backward(policy, s.obs, s.action, upstream, &mut grad)?;
            }
        } else {
            surrogate += clipped;
        }
    }
    for g in grad.log_std.iter_mut() {
        *g -= entropy_coef;
    }
    let loss = -surrogate / n - entropy_coef * entropy(policy);
    Ok((loss, grad))
}

/// Mean squared error of the critic against `targets`.
pub fn value_loss(critic: &MlpParams, obs: &[&[f64]], targets: &[f64]) -> Result<(f64, MlpParams)> {
    if obs.is_empty() {
        return Err(Error::InvalidArgument("value loss over an empty set".into()));
    }
    if obs.len() != targets.len() {
        return Err(Error::InvalidArgument("observation/target count mismatch".into()));
    }
    let n = obs.len() as f64;
    let mut grad = critic.zeros_like();
    let mut loss = 0.0;
    for (o, &target) in obs.iter().zip(targets) {
        let err = value_forward(critic, o)? - target;
        loss += err * err;
        value_backward_into(critic, o, 2.0 * err / n, &mut grad)?;
    }
    Ok((loss / n, grad))
}

/// Critic loss over the primary-sourced transitions of a batch only.
pub fn value_loss_on_batch(critic: &MlpParams, batch: &RolloutBatch) -> Result<(f64, MlpParams)> {
    let returns = batch
        .returns
        .as_ref()
        .ok_or_else(|| Error::InvalidState("return targets not computed".into()))?;
    let idx = batch.indices_of(Source::Primary);
    let obs: Vec<&[f64]> = idx.iter().map(|&i| batch.transitions[i].obs.as_slice()).collect();
    let targets: Vec<f64> = idx.iter().map(|&i| returns[i]).collect();
    value_loss(critic, &obs, &targets)
}

/// Importance ratios of every transition under `policy`.
pub fn ratios(policy: &MlpParams, batch: &RolloutBatch) -> Result<Vec<f64>> {
    batch
        .transitions
        .iter()
        .map(|t| Ok((log_prob(&policy_forward(policy, &t.obs)?, &t.action) - t.behavior_log_prob).exp()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use rand::SeedableRng;

    fn tiny_policy() -> MlpParams {
        MlpParams::init_policy(2, &[4], 1, &mut SimRng::seed_from_u64(1))
    }

    fn sample_at<'a>(p: &MlpParams, obs: &'a [f64], action: &'a [f64], shift: f64, adv: f64) -> PolicySample<'a> {
        let lp = log_prob(&policy_forward(p, obs).unwrap(), action);
        PolicySample {
            obs,
            action,
            behavior_log_prob: lp - shift,
            advantage: adv,
        }
    }

    #[test]
    fn on_policy_loss_is_minus_mean_advantage_minus_entropy() {
        let p = tiny_policy();
        let obs = [[0.1, 0.2], [-0.3, 0.5], [0.7, -0.1]];
        let acts = [[0.4], [-0.2], [1.1]];
        let advs = [0.5, -1.0, 2.0];
        let samples: Vec<_> = (0..3).map(|i| sample_at(&p, &obs[i], &acts[i], 0.0, advs[i])).collect();
        let beta = 0.01;
        let (loss, _) = ppo_policy_loss(&p, &samples, 0.2, beta).unwrap();
        let want = -(0.5 - 1.0 + 2.0) / 3.0 - beta * entropy(&p);
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn single_sample_unit_ratio() {
        let p = tiny_policy();
        let s = sample_at(&p, &[0.1, 0.1], &[0.3], 0.0, 1.0);
        let (loss, _) = ppo_policy_loss(&p, &[s], 0.2, 0.0).unwrap();
        assert!((loss + 1.0).abs() < 1e-12);
    }

    #[test]
    fn clipped_branch_has_zero_gradient() {
        let p = tiny_policy();
        let s = sample_at(&p, &[0.1, 0.1], &[0.3], 1.5f64.ln(), 1.0);
        let (loss, grad) = ppo_policy_loss(&p, &[s], 0.2, 0.0).unwrap();
        assert!((loss + 1.2).abs() < 1e-12);
        assert_eq!(grad.norm(), 0.0);
    }

    #[test]
    fn non_finite_ratio_is_reported() {
        let p = tiny_policy();
        let mut s = sample_at(&p, &[0.1, 0.1], &[0.3], 0.0, 1.0);
        s.behavior_log_prob = -1e308;
        assert!(matches!(
            ppo_policy_loss(&p, &[s], 0.2, 0.0),
            Err(Error::NumericalFailure { index: 0, .. })
        ));
    }

    #[test]
    fn value_loss_examples() {
        let zero = MlpParams::zeros(&[2, 3, 1], 0);
        let (l, _) = value_loss(&zero, &[&[0.5, 0.5]], &[2.0]).unwrap();
        assert_eq!(l, 4.0);

        let c = MlpParams::init_critic(2, &[5], &mut SimRng::seed_from_u64(2));
        let obs: [&[f64]; 2] = [&[0.1, 0.9], &[-0.4, 0.3]];
        let targets: Vec<f64> = obs.iter().map(|o| value_forward(&c, o).unwrap()).collect();
        let (l, g) = value_loss(&c, &obs, &targets).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g.norm(), 0.0);

        assert!(matches!(value_loss(&c, &[], &[]), Err(Error::InvalidArgument(_))));
    }
}
