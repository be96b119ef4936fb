use rand::seq::SliceRandom;
use rand::RngCore;

use super::loss::{ppo_policy_loss, ratios, value_loss, PolicySample};
use super::rollout::{RolloutBatch, Source};
use crate::error::{Error, Result};
use crate::nets::{adam_step, clip_grad_norm, AdamConfig, AdamState, MlpParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub epochs: usize,
    pub minibatches: usize,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            minibatches: 8,
            lr_policy: 3e-4,
            lr_critic: 3e-4,
            clip_eps: 0.2,
            entropy_coef: 1e-3,
            gamma: 0.95,
            lambda: 0.95,
            max_grad_norm: 0.5,
        }
    }
}

/// Optimizer state of the primary policy and critic; persists across iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoOptim {
    pub policy: AdamState,
    pub critic: AdamState,
}

impl PpoOptim {
    pub fn new(policy: &MlpParams, critic: &MlpParams) -> Self {
        Self {
            policy: AdamState::new(policy),
            critic: AdamState::new(critic),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    /// Largest `|ratio - 1|` over primary-sourced samples before any update.
    pub initial_primary_ratio_dev: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
}

fn split_even(n: usize, parts: usize) -> Vec<(usize, usize)> {
    let parts = parts.clamp(1, n.max(1));
    let base = n / parts;
    let extra = n % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

fn normalize(adv: &mut [f64]) {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

/// Policy epochs over the whole (augmented) batch, then critic epochs over
/// its primary-sourced transitions only.
pub fn ppo_update(
    policy: &mut MlpParams,
    critic: &mut MlpParams,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    optim: &mut PpoOptim,
    rng: &mut dyn RngCore,
) -> Result<UpdateStats> {
    let advantages = batch
        .advantages
        .as_ref()
        .ok_or_else(|| Error::InvalidState("advantages not computed".into()))?;
    let returns = batch.returns.as_ref().expect("returns are set with advantages");
    let primary = batch.indices_of(Source::Primary);
    if primary.is_empty() {
        return Err(Error::InvalidArgument("batch has no primary-sourced data".into()));
    }

    let initial_primary_ratio_dev = ratios(policy, batch)?
        .iter()
        .zip(&batch.transitions)
        .filter(|(_, t)| t.source == Source::Primary)
        .map(|(r, _)| (r - 1.0).abs())
        .fold(0.0, f64::max);

    let adam = AdamConfig::default();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut policy_loss = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for (lo, hi) in split_even(order.len(), cfg.minibatches) {
            let idx = &order[lo..hi];
            let mut adv: Vec<f64> = idx.iter().map(|&i| advantages[i]).collect();
            normalize(&mut adv);
            let samples: Vec<PolicySample<'_>> = idx
                .iter()
                .zip(&adv)
                .map(|(&i, &a)| {
                    let t = &batch.transitions[i];
                    PolicySample {
                        obs: &t.obs,
                        action: &t.action,
                        behavior_log_prob: t.behavior_log_prob,
                        advantage: a,
                    }
                })
                .collect();
            let (loss, mut grad) = ppo_policy_loss(policy, &samples, cfg.clip_eps, cfg.entropy_coef)?;
            clip_grad_norm(&mut grad, cfg.max_grad_norm);
            adam_step(policy, &mut optim.policy, &grad, cfg.lr_policy, adam)?;
            policy.clamp_log_std();
            policy_loss = loss;
        }
    }

    let mut order = primary;
    let mut last_value_loss = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for (lo, hi) in split_even(order.len(), cfg.minibatches) {
            let idx = &order[lo..hi];
            let obs: Vec<&[f64]> = idx.iter().map(|&i| batch.transitions[i].obs.as_slice()).collect();
            let targets: Vec<f64> = idx.iter().map(|&i| returns[i]).collect();
            let (loss, mut grad) = value_loss(critic, &obs, &targets)?;
            clip_grad_norm(&mut grad, cfg.max_grad_norm);
            adam_step(critic, &mut optim.critic, &grad, cfg.lr_critic, adam)?;
            last_value_loss = loss;
        }
    }

    Ok(UpdateStats {
        initial_primary_ratio_dev,
        policy_loss,
        value_loss: last_value_loss,
    })
}
