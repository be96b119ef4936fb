use std::time::Instant;

use super::config::{Mode, TrainConfig};
use super::metrics::{advantage_gap, evaluate, IterationMetrics};
use crate::bptt::{apg_backward, apg_rollout, make_exploratory_policy, ApgTape};
use crate::diffenv::EnvSpec;
use crate::error::{Error, Result};
use crate::nets::{adam_step, clip_grad_norm, value_forward, AdamConfig, AdamState, MlpParams};
use crate::ppo::{
    collect_from_lanes, compute_gae, ppo_update, value_loss, Lane, PpoOptim, RolloutBatch, Source,
};
use crate::rng::{stream_rng, Stream};

/// Owns all training state. [`Trainer::step`] runs one iteration.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub env: EnvSpec,
    pub policy: MlpParams,
    pub critic: MlpParams,
    optim: PpoOptim,
    /// Persistent actor optimizer for `apg_only` mode.
    apg_optim: AdamState,
    lanes: Vec<Lane>,
    iteration: usize,
    env_steps: usize,
    /// Batch used by the most recent PPO update (after GAE).
    last_batch: Option<RolloutBatch>,
}

pub struct TrainOutput {
    pub metrics: Vec<IterationMetrics>,
    pub policy: MlpParams,
    pub critic: MlpParams,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let env = EnvSpec::new(cfg.env);
        let mut init = stream_rng(cfg.seed, Stream::Init, 0);
        let policy = MlpParams::init_policy(env.dim_s, &cfg.hidden, env.dim_a, &mut init);
        let critic = MlpParams::init_critic(env.dim_s, &cfg.hidden, &mut init);
        let mut lane_rng = stream_rng(cfg.seed, Stream::Lanes, 0);
        let lanes = (0..cfg.n_envs).map(|_| Lane::fresh(&env, &mut lane_rng)).collect();
        Ok(Self {
            optim: PpoOptim::new(&policy, &critic),
            apg_optim: AdamState::new(&policy),
            cfg,
            env,
            policy,
            critic,
            lanes,
            iteration: 0,
            env_steps: 0,
            last_batch: None,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn last_batch(&self) -> Option<&RolloutBatch> {
        self.last_batch.as_ref()
    }

    pub fn step(&mut self) -> Result<IterationMetrics> {
        let started = Instant::now();
        let mut m = match self.cfg.mode {
            Mode::ApgOnly => self.step_apg_only()?,
            Mode::Augmented | Mode::PpoBaseline => self.step_ppo()?,
        };
        let mut eval_rng = stream_rng(self.cfg.seed, Stream::Eval, 0);
        let (mean, std) = evaluate(&self.policy, &self.env, self.cfg.eval_episodes, &mut eval_rng)?;
        m.eval_return_mean = mean;
        m.eval_return_std = std;
        m.env_steps = self.env_steps;
        if self.cfg.wall_clock {
            m.wall_ms = started.elapsed().as_millis() as u64;
        }
        self.iteration += 1;
        Ok(m)
    }

    fn blank_metrics(&self) -> IterationMetrics {
        IterationMetrics {
            iteration: self.iteration,
            env_steps: 0,
            eval_return_mean: f64::NAN,
            eval_return_std: f64::NAN,
            train_return_mean: f64::NAN,
            adv_primary_mean: f64::NAN,
            adv_explore_mean: f64::NAN,
            adv_gap: f64::NAN,
            apg_loss_trace: Vec::new(),
            apg_failed: false,
            initial_primary_ratio_dev: f64::NAN,
            wall_ms: 0,
        }
    }

    fn step_ppo(&mut self) -> Result<IterationMetrics> {
        let k = self.iteration;
        let cfg = &self.cfg;
        let mut m = self.blank_metrics();

        let explore_policy = if cfg.explores_at(k) {
            let mut rng = stream_rng(cfg.seed, Stream::Apg, k as u64);
            let out = make_exploratory_policy(&self.policy, &self.critic, &self.env, &cfg.apg(), &mut rng);
            self.env_steps += out.env_steps;
            m.apg_loss_trace = out.loss_trace;
            match out.failure {
                None => Some(out.params),
                Some(e) => {
                    // Degrade to plain PPO for this iteration.
                    eprintln!("iteration {k}: APG failed ({e}); collecting primary data only");
                    m.apg_failed = true;
                    None
                }
            }
        } else {
            None
        };

        let n_primary = if explore_policy.is_some() {
            cfg.primary_lanes()
        } else {
            cfg.n_envs
        };
        let (primary_lanes, explore_lanes) = self.lanes.split_at_mut(n_primary);
        let mut rng = stream_rng(cfg.seed, Stream::Rollout, k as u64);
        let primary = collect_from_lanes(
            &self.env,
            &self.policy,
            Some(&self.critic),
            primary_lanes,
            cfg.rollout_len,
            &mut rng,
            Source::Primary,
        )?;
        if !primary.episode_returns.is_empty() {
            m.train_return_mean = primary.episode_returns.iter().sum::<f64>() / primary.episode_returns.len() as f64;
        }
        let mut batch = match &explore_policy {
            Some(explore) => {
                let extra = collect_from_lanes(
                    &self.env,
                    explore,
                    Some(&self.critic),
                    explore_lanes,
                    cfg.rollout_len,
                    &mut rng,
                    Source::Explore,
                )?;
                primary.merge(extra)?
            }
            None => primary,
        };
        // The exploratory policy is only needed for collection.
        drop(explore_policy);
        self.env_steps += cfg.n_envs * cfg.rollout_len;

        compute_gae(&mut batch, cfg.gamma, cfg.gae_lambda)?;
        if let Some(i) = batch.advantages.iter().flatten().position(|a| !a.is_finite()) {
            return Err(Error::NumericalFailure { what: "advantage", index: i });
        }
        m.adv_primary_mean = batch.mean_advantage(Source::Primary).unwrap_or(f64::NAN);
        m.adv_explore_mean = batch.mean_advantage(Source::Explore).unwrap_or(f64::NAN);
        m.adv_gap = advantage_gap(&batch).unwrap_or(f64::NAN);

        let mut shuffle = stream_rng(cfg.seed, Stream::Shuffle, k as u64);
        let stats = ppo_update(&mut self.policy, &mut self.critic, &batch, &cfg.ppo(), &mut self.optim, &mut shuffle)?;
        m.initial_primary_ratio_dev = stats.initial_primary_ratio_dev;
        ensure_finite(&self.policy, "policy parameters")?;
        ensure_finite(&self.critic, "critic parameters")?;
        self.last_batch = Some(batch);
        Ok(m)
    }

    fn step_apg_only(&mut self) -> Result<IterationMetrics> {
        let k = self.iteration;
        let cfg = self.cfg.clone();
        let apg = cfg.apg();
        let mut m = self.blank_metrics();
        let mut rng = stream_rng(cfg.seed, Stream::Apg, k as u64);
        let mut fit_obs: Vec<Vec<f64>> = Vec::new();
        let mut fit_targets: Vec<f64> = Vec::new();
        for _ in 0..apg.epochs {
            let (tape, loss) = apg_rollout(&self.env, &self.policy, &self.critic, apg.n_agents, apg.horizon, apg.gamma, &mut rng)?;
            self.env_steps += apg.n_agents * apg.horizon;
            let mut grad = apg_backward(&tape, &self.policy, &self.critic)?;
            clip_grad_norm(&mut grad, apg.max_grad_norm);
            adam_step(&mut self.policy, &mut self.apg_optim, &grad, apg.lr, AdamConfig::default())?;
            self.policy.clamp_log_std();
            m.apg_loss_trace.push(loss);
            critic_targets(&tape, &self.critic, &mut fit_obs, &mut fit_targets)?;
        }

        let ppo = cfg.ppo();
        let mut shuffle = stream_rng(cfg.seed, Stream::Shuffle, k as u64);
        let mut order: Vec<usize> = (0..fit_obs.len()).collect();
        for _ in 0..ppo.epochs {
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle);
            let chunk = order.len().div_ceil(ppo.minibatches).max(1);
            for idx in order.chunks(chunk) {
                let obs: Vec<&[f64]> = idx.iter().map(|&i| fit_obs[i].as_slice()).collect();
                let targets: Vec<f64> = idx.iter().map(|&i| fit_targets[i]).collect();
                let (_, mut grad) = value_loss(&self.critic, &obs, &targets)?;
                clip_grad_norm(&mut grad, ppo.max_grad_norm);
                adam_step(&mut self.critic, &mut self.optim.critic, &grad, ppo.lr_critic, AdamConfig::default())?;
            }
        }
        ensure_finite(&self.policy, "policy parameters")?;
        ensure_finite(&self.critic, "critic parameters")?;
        Ok(m)
    }
}

fn ensure_finite(params: &MlpParams, what: &'static str) -> Result<()> {
    match params.flatten().iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NumericalFailure { what, index }),
        None => Ok(()),
    }
}

/// Discounted reward-to-go inside the horizon plus the discounted critic
/// value of the lane's last state (zero after a real termination).
fn critic_targets(tape: &ApgTape, critic: &MlpParams, obs: &mut Vec<Vec<f64>>, targets: &mut Vec<f64>) -> Result<()> {
    for lane in &tape.lanes {
        let mut tail = if lane.terminated {
            0.0
        } else {
            value_forward(critic, &lane.terminal)?
        };
        let first = obs.len();
        for rec in lane.steps[..lane.steps_taken].iter().rev() {
            tail = rec.reward + tape.gamma * tail;
            obs.push(rec.state.clone());
            targets.push(tail);
        }
        obs[first..].reverse();
        targets[first..].reverse();
    }
    Ok(())
}

/// Runs all configured iterations.
pub fn train(cfg: TrainConfig) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(cfg)?;
    let mut metrics = Vec::with_capacity(trainer.cfg.iterations);
    for _ in 0..trainer.cfg.iterations {
        metrics.push(trainer.step()?);
    }
    Ok(TrainOutput {
        metrics,
        policy: trainer.policy,
        critic: trainer.critic,
    })
}
