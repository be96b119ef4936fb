use std::fmt;
use std::str::FromStr;

use crate::bptt::ApgConfig;
use crate::diffenv::EnvName;
use crate::error::{Error, Result};
use crate::ppo::PpoConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// PPO on primary data merged with exploratory-policy data.
    Augmented,
    /// Plain PPO on all lanes.
    PpoBaseline,
    /// Chained APG updates of a single policy with a critic fitted on the
    /// APG rollouts.
    ApgOnly,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Augmented, Mode::PpoBaseline, Mode::ApgOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Augmented => "augmented",
            Mode::PpoBaseline => "ppo_baseline",
            Mode::ApgOnly => "apg_only",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: EnvName,
    pub mode: Mode,
    pub seed: u64,
    /// Number of training iterations K.
    pub iterations: usize,
    /// Total PPO lanes n.
    pub n_envs: usize,
    /// PPO rollout length per lane T.
    pub rollout_len: usize,
    /// APG update frequency f: exploration runs when `iteration % f == 0`.
    pub apg_every: usize,
    /// APG horizon h.
    pub apg_horizon: usize,
    /// APG epochs e.
    pub apg_epochs: usize,
    /// APG parallel agents N.
    pub apg_agents: usize,
    /// Fraction alpha of lanes given to the exploratory policy.
    pub alpha: f64,
    pub gamma: f64,
    pub apg_lr: f64,
    pub ppo_lr: f64,
    pub critic_lr: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub ppo_epochs: usize,
    pub minibatches: usize,
    pub max_grad_norm: f64,
    pub apg_max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub eval_episodes: usize,
    /// Record real elapsed time in `wall_ms`; off by default so metrics are
    /// byte-reproducible.
    pub wall_clock: bool,
}

impl TrainConfig {
    /// Defaults for an environment. The cartpole row uses two APG epochs,
    /// the others five.
    pub fn for_env(env: EnvName) -> Self {
        Self {
            env,
            mode: Mode::Augmented,
            seed: 0,
            iterations: 100,
            n_envs: 64,
            rollout_len: 32,
            apg_every: 1,
            apg_horizon: 4,
            apg_epochs: if env == EnvName::Cartpole { 2 } else { 5 },
            apg_agents: 256,
            alpha: 0.5,
            gamma: 0.95,
            apg_lr: 3e-5,
            ppo_lr: 3e-4,
            critic_lr: 3e-4,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            entropy_coef: 1e-3,
            ppo_epochs: 4,
            minibatches: 8,
            max_grad_norm: 0.5,
            apg_max_grad_norm: 1.0,
            hidden: vec![64, 64],
            eval_episodes: 8,
            wall_clock: false,
        }
    }

    /// Lanes given to the exploratory policy: `floor(alpha * n)`, leaving
    /// at least one primary lane.
    pub fn explore_lanes(&self) -> usize {
        let raw = (self.alpha * self.n_envs as f64).floor() as usize;
        raw.min(self.n_envs.saturating_sub(1))
    }

    pub fn primary_lanes(&self) -> usize {
        self.n_envs - self.explore_lanes()
    }

    /// Whether iteration `k` builds an exploratory policy.
    pub fn explores_at(&self, k: usize) -> bool {
        self.mode == Mode::Augmented && self.explore_lanes() > 0 && k.is_multiple_of(self.apg_every)
    }

    pub fn apg(&self) -> ApgConfig {
        ApgConfig {
            n_agents: self.apg_agents,
            horizon: self.apg_horizon,
            epochs: self.apg_epochs,
            lr: self.apg_lr,
            gamma: self.gamma,
            max_grad_norm: self.apg_max_grad_norm,
        }
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            epochs: self.ppo_epochs,
            minibatches: self.minibatches,
            lr_policy: self.ppo_lr,
            lr_critic: self.critic_lr,
            clip_eps: self.clip_eps,
            entropy_coef: self.entropy_coef,
            gamma: self.gamma,
            lambda: self.gae_lambda,
            max_grad_norm: self.max_grad_norm,
        }
    }

    /// Closed-form cumulative environment steps after `k` iterations.
    pub fn scheduled_env_steps(&self, k: usize) -> usize {
        let apg = self.apg_agents * self.apg_horizon * self.apg_epochs;
        match self.mode {
            Mode::ApgOnly => k * apg,
            _ => (0..k).map(|i| self.n_envs * self.rollout_len + if self.explores_at(i) { apg } else { 0 }).sum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let positive_ints = [
            ("iterations", self.iterations),
            ("n_envs", self.n_envs),
            ("rollout_len", self.rollout_len),
            ("apg_every", self.apg_every),
            ("apg_horizon", self.apg_horizon),
            ("apg_agents", self.apg_agents),
            ("ppo_epochs", self.ppo_epochs),
            ("minibatches", self.minibatches),
            ("eval_episodes", self.eval_episodes),
        ];
        for (name, v) in positive_ints {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        let positive_reals = [
            ("apg_lr", self.apg_lr),
            ("ppo_lr", self.ppo_lr),
            ("critic_lr", self.critic_lr),
            ("clip_eps", self.clip_eps),
            ("max_grad_norm", self.max_grad_norm),
            ("apg_max_grad_norm", self.apg_max_grad_norm),
        ];
        for (name, v) in positive_reals {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda must be in [0, 1], got {}", self.gae_lambda));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if !(self.entropy_coef.is_finite() && self.entropy_coef >= 0.0) {
            return bad("entropy_coef must be non-negative".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        Ok(())
    }
}
