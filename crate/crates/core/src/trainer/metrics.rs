use std::io::{self, Write};

use rand::RngCore;

use crate::diffenv::Dynamics;
use crate::error::{Error, Result};
use crate::nets::{policy_forward, MlpParams};
use crate::ppo::{RolloutBatch, Source};

pub const CSV_HEADER: [&str; 10] = [
    "iter",
    "env_steps",
    "eval_return_mean",
    "eval_return_std",
    "train_return_mean",
    "adv_primary_mean",
    "adv_explore_mean",
    "adv_gap",
    "apg_loss",
    "wall_ms",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Cumulative PPO plus APG environment steps after this iteration.
    pub env_steps: usize,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    /// Mean return of primary-lane episodes finished this iteration (NaN if none).
    pub train_return_mean: f64,
    pub adv_primary_mean: f64,
    pub adv_explore_mean: f64,
    /// NaN when one of the sources is absent.
    pub adv_gap: f64,
    /// APG loss of every epoch this iteration (empty if no APG ran).
    pub apg_loss_trace: Vec<f64>,
    pub apg_failed: bool,
    /// `max |ratio - 1|` over primary samples before the PPO update (NaN in apg_only mode).
    pub initial_primary_ratio_dev: f64,
    pub wall_ms: u64,
}

impl IterationMetrics {
    /// Last APG epoch loss, NaN if none.
    pub fn apg_loss(&self) -> f64 {
        self.apg_loss_trace.last().copied().unwrap_or(f64::NAN)
    }

    pub fn csv_fields(&self) -> [String; 10] {
        [
            self.iteration.to_string(),
            self.env_steps.to_string(),
            format_float(self.eval_return_mean),
            format_float(self.eval_return_std),
            format_float(self.train_return_mean),
            format_float(self.adv_primary_mean),
            format_float(self.adv_explore_mean),
            format_float(self.adv_gap),
            format_float(self.apg_loss()),
            self.wall_ms.to_string(),
        ]
    }
}

/// Decimal notation with 17 significant digits, which round-trips any f64.
/// Non-finite values are written as `NaN`, `inf` or `-inf`.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let exponent = x.abs().log10().floor() as i32;
    let decimals = (16 - exponent).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Header plus one row per iteration, comma separated, LF line endings.
pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[IterationMetrics]) -> io::Result<()> {
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for row in rows {
        writeln!(out, "{}", row.csv_fields().join(","))?;
    }
    Ok(())
}

/// Mean pre-normalization advantage of explore-sourced samples minus that of
/// primary-sourced samples. `None` if a source is missing.
pub fn advantage_gap(batch: &RolloutBatch) -> Option<f64> {
    Some(batch.mean_advantage(Source::Explore)? - batch.mean_advantage(Source::Primary)?)
}

/// Undiscounted return statistics (mean, population std) of `episodes`
/// rollouts with deterministic mean actions.
pub fn evaluate<D: Dynamics + ?Sized>(policy: &MlpParams, env: &D, episodes: usize, rng: &mut dyn RngCore) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluate needs at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = env.reset(rng);
        let mut total = 0.0;
        while !s.done {
            let mean = policy_forward(policy, &s.sim)?.mean;
            let out = env.step(&s, &env.clip_action(&mean))?;
            total += out.reward;
            s = out.next;
        }
        returns.push(total);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}
