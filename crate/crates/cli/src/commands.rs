use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use apgx::gradcheck;
use apgx::nets::save_checkpoint;
use apgx::trainer::{format_float, write_metrics_csv, IterationMetrics, Mode, Trainer};

use crate::config::{self, RunConfig};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// An error together with the process exit code it maps to.
#[derive(Debug)]
pub struct CommandError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl CommandError {
    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        CommandError { code: EXIT_CONFIG, error: error.into() }
    }
}

impl fmt::Display for CommandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<anyhow::Error> for CommandError {
    fn from(error: anyhow::Error) -> Self {
        CommandError { code: EXIT_FAILURE, error }
    }
}

impl From<apgx::Error> for CommandError {
    fn from(error: apgx::Error) -> Self {
        let code = match error {
            apgx::Error::NumericalFailure { .. } => EXIT_NUMERICAL,
            apgx::Error::InvalidArgument(_) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        };
        CommandError { code, error: error.into() }
    }
}

pub type CmdResult<T> = std::result::Result<T, CommandError>;

/// Options shared by the run commands.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub mode: Option<Mode>,
    pub overrides: Vec<String>,
}

pub fn load_config(opts: &RunOptions) -> CmdResult<RunConfig> {
    let text = match &opts.config {
        Some(path) => fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .map_err(CommandError::config)?,
        None => String::new(),
    };
    let mut cfg = config::parse_with_overrides(&text, &opts.overrides).map_err(|e| {
        let origin = opts.config.as_ref().map_or("config".into(), |p| p.display().to_string());
        CommandError::config(anyhow::anyhow!("{origin}: {e}"))
    })?;
    if let Some(&first) = opts.seeds.first() {
        cfg.train.seed = first;
        cfg.seeds = opts.seeds.clone();
    }
    if let Some(mode) = opts.mode {
        cfg.train.mode = mode;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> CmdResult<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Run description written before any training starts. The config snapshot
/// is the serialized configuration, so it can be fed back with `--config`.
pub fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, modes: &[Mode]) -> CmdResult<()> {
    let modes: Vec<&str> = modes.iter().map(|m| m.as_str()).collect();
    let seeds: Vec<String> = cfg.seeds.iter().map(u64::to_string).collect();
    let text = format!(
        "# apgx {} run manifest\n# version: {}\n# command: {}\n# modes: {}\n# seeds: {}\n# output: {}\n\n{}",
        command,
        env!("CARGO_PKG_VERSION"),
        command,
        modes.join(", "),
        seeds.join(", "),
        dir.display(),
        config::serialize(cfg),
    );
    write_file(&dir.join("manifest.txt"), text.as_bytes())
}

fn metrics_csv(rows: &[IterationMetrics]) -> Vec<u8> {
    let mut bytes = Vec::new();
    write_metrics_csv(&mut bytes, rows).expect("writing to memory");
    bytes
}

/// Runs one training job, writing the metrics CSV to `csv_path` even when
/// the run aborts part way.
fn run_job(cfg: &apgx::trainer::TrainConfig, csv_path: &Path) -> CmdResult<(Vec<IterationMetrics>, Trainer)> {
    let mut trainer = Trainer::new(cfg.clone())?;
    let mut rows = Vec::with_capacity(cfg.iterations);
    let mut failure = None;
    for _ in 0..cfg.iterations {
        match trainer.step() {
            Ok(m) => rows.push(m),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    write_file(csv_path, &metrics_csv(&rows))?;
    match failure {
        None => Ok((rows, trainer)),
        Some(e) => {
            let mut err = CommandError::from(e);
            err.error = err
                .error
                .context(format!("{} seed {} aborted at iteration {}", cfg.mode, cfg.seed, rows.len()));
            Err(err)
        }
    }
}

/// `train`: one run with metrics, manifest and final checkpoints of the
/// primary policy and critic.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> CmdResult<()> {
    if cfg.seeds.len() > 1 {
        return Err(CommandError::config(anyhow::anyhow!("train takes a single seed")));
    }
    create_dir(out)?;
    write_manifest(out, "train", cfg, &[cfg.train.mode])?;
    let (rows, trainer) = run_job(&cfg.train, &out.join("metrics.csv"))?;
    save_checkpoint(&out.join("policy.ckpt"), &trainer.policy).context("writing policy checkpoint")?;
    save_checkpoint(&out.join("critic.ckpt"), &trainer.critic).context("writing critic checkpoint")?;
    if let Some(last) = rows.last() {
        eprintln!(
            "{} {} seed {}: {} iterations, {} env steps, eval return {:.3}",
            cfg.train.env, cfg.train.mode, cfg.train.seed, rows.len(), last.env_steps, last.eval_return_mean
        );
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub mode: Mode,
    /// Median env steps to reach the threshold; `None` if not reached.
    pub median_steps: Option<f64>,
    pub final_mean: f64,
    pub final_std: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// 90% of `reference`, measured from the reference towards worse returns so
/// the rule also works when returns are negative.
pub fn threshold_from(reference: f64) -> f64 {
    reference - 0.1 * reference.abs()
}

/// Env-step count of the first iteration whose evaluation return reaches
/// `threshold`; infinite if never reached.
pub fn steps_to_threshold(rows: &[IterationMetrics], threshold: f64) -> f64 {
    rows.iter()
        .find(|m| m.eval_return_mean >= threshold)
        .map_or(f64::INFINITY, |m| m.env_steps as f64)
}

pub fn summarize(mode: Mode, runs: &[Vec<IterationMetrics>], threshold: f64) -> SummaryRow {
    let finals: Vec<f64> = runs
        .iter()
        .map(|r| r.last().map_or(f64::NAN, |m| m.eval_return_mean))
        .collect();
    let n = finals.len() as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let var = finals.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n;
    let steps: Vec<f64> = runs.iter().map(|r| steps_to_threshold(r, threshold)).collect();
    let med = median(&steps);
    SummaryRow { mode, median_steps: med.is_finite().then_some(med), final_mean: mean, final_std: var.sqrt() }
}

pub const SUMMARY_HEADER: &str = "mode,seeds,threshold,median_steps_to_threshold,final_return_mean,final_return_std";

pub fn summary_csv(rows: &[SummaryRow], seeds: usize, threshold: f64) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let steps = r.median_steps.map_or("not reached".to_string(), format_float);
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.mode,
            seeds,
            format_float(threshold),
            steps,
            format_float(r.final_mean),
            format_float(r.final_std)
        ));
    }
    out
}

fn summary_table(rows: &[SummaryRow], threshold: f64) -> String {
    let mut out = format!("threshold {threshold:.3}\n{:<14} {:>18} {:>24}\n", "mode", "steps to thr", "final return");
    for r in rows {
        let steps = r.median_steps.map_or("not reached".to_string(), |s| format!("{s:.0}"));
        out.push_str(&format!(
            "{:<14} {:>18} {:>24}\n",
            r.mode.as_str(),
            steps,
            format!("{:.3} +/- {:.3}", r.final_mean, r.final_std)
        ));
    }
    out
}

/// Order in which `compare` runs and reports modes.
pub const COMPARE_MODES: [Mode; 3] = [Mode::Augmented, Mode::PpoBaseline, Mode::ApgOnly];

/// `compare`: every mode for every seed, then a summary. Per-run CSVs go to
/// `out/<mode>/seed_<s>.csv`, the summary to `out/summary.csv`.
pub fn cmd_compare(cfg: &RunConfig, out: &Path) -> CmdResult<Vec<SummaryRow>> {
    if cfg.seeds.is_empty() {
        return Err(CommandError::config(anyhow::anyhow!("compare needs at least one seed")));
    }
    create_dir(out)?;
    write_manifest(out, "compare", cfg, &COMPARE_MODES)?;
    let mut all_runs = Vec::new();
    for mode in COMPARE_MODES {
        let dir = out.join(mode.as_str());
        create_dir(&dir)?;
        let mut runs = Vec::new();
        for &seed in &cfg.seeds {
            let mut train = cfg.train.clone();
            train.mode = mode;
            train.seed = seed;
            let (rows, _) = run_job(&train, &dir.join(format!("seed_{seed}.csv")))?;
            eprintln!(
                "{} {} seed {}: final eval return {:.3}",
                train.env,
                mode,
                seed,
                rows.last().map_or(f64::NAN, |m| m.eval_return_mean)
            );
            runs.push(rows);
        }
        all_runs.push((mode, runs));
    }
    let baseline = &all_runs.iter().find(|(m, _)| *m == Mode::PpoBaseline).expect("baseline runs").1;
    let finals: Vec<f64> = baseline
        .iter()
        .map(|r| r.last().map_or(f64::NAN, |m| m.eval_return_mean))
        .collect();
    let threshold = threshold_from(median(&finals));
    let rows: Vec<SummaryRow> = all_runs.iter().map(|(mode, runs)| summarize(*mode, runs, threshold)).collect();
    write_file(&out.join("summary.csv"), summary_csv(&rows, cfg.seeds.len(), threshold).as_bytes())?;
    print!("{}", summary_table(&rows, threshold));
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Horizon,
    Frequency,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "h" => Ok(SweepAxis::Horizon),
            "f" => Ok(SweepAxis::Frequency),
            other => Err(format!("unknown sweep axis '{other}' (expected h or f)")),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Horizon => "h",
            SweepAxis::Frequency => "f",
        }
    }
}

/// Agents used by every sweep run.
pub const SWEEP_AGENTS: usize = 64;

/// `sweep`: a full comparison per value of `h` or `f`, in `out/<axis>_<v>/`.
pub fn cmd_sweep(cfg: &RunConfig, axis: SweepAxis, values: &[usize], out: &Path) -> CmdResult<Vec<(usize, Vec<SummaryRow>)>> {
    if values.is_empty() {
        return Err(CommandError::config(anyhow::anyhow!("sweep needs at least one value")));
    }
    if values.contains(&0) {
        return Err(CommandError::config(anyhow::anyhow!("sweep values must be positive")));
    }
    create_dir(out)?;
    let mut results = Vec::new();
    for &v in values {
        let mut point = cfg.clone();
        point.train.apg_agents = SWEEP_AGENTS;
        match axis {
            SweepAxis::Horizon => point.train.apg_horizon = v,
            SweepAxis::Frequency => point.train.apg_every = v,
        }
        println!("{} = {v}", axis.name());
        let rows = cmd_compare(&point, &out.join(format!("{}_{v}", axis.name())))?;
        results.push((v, rows));
    }
    Ok(results)
}

/// `gradcheck`: prints one line per suite; fails if any exceeds its tolerance.
pub fn cmd_gradcheck(seed: u64) -> CmdResult<bool> {
    let lines = gradcheck::run_all(seed)?;
    let mut ok = true;
    for line in &lines {
        let status = if line.passed() { "ok" } else { "FAIL" };
        ok &= line.passed();
        println!("{:<40} max error {:.3e} (tolerance {:.0e}) {status}", line.name, line.max_error, line.tolerance);
    }
    Ok(ok)
}
