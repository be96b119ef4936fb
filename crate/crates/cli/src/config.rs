//! Run configuration files.
//!
//! The format is plain text: `[section]` headers followed by `key = value`
//! lines. `#` starts a comment. Every key must belong to a section and must
//! be known; anything else is rejected with the offending line number.
//!
//! ```text
//! [trainer]
//! env = point_mass
//! mode = augmented
//! iterations = 100
//!
//! [bptt]
//! horizon = 4
//! lr = 3e-5
//!
//! [run]
//! seeds = 0, 1, 2
//! ```
//!
//! Sections and keys:
//!
//! - `trainer`: env, mode, seed, iterations, n_envs, rollout_len, alpha,
//!   gamma, hidden, eval_episodes, wall_clock
//! - `bptt`: every, horizon, epochs, agents, lr, max_grad_norm
//! - `ppo`: lr, critic_lr, gae_lambda, clip_eps, entropy_coef, epochs,
//!   minibatches, max_grad_norm
//! - `run`: seeds (used by `compare` and `sweep`)
//!
//! Unset keys take the per-environment defaults of [`TrainConfig::for_env`].

use std::fmt;
use std::str::FromStr;

use apgx::diffenv::EnvName;
use apgx::trainer::{Mode, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: Option<usize>, message: impl Into<String>) -> Self {
        ConfigError { line, message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "line {n}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
}

/// One `section.key = value` assignment and where it came from.
#[derive(Debug, Clone)]
struct Entry {
    line: Option<usize>,
    section: String,
    key: String,
    value: String,
}

const KEYS: &[(&str, &[&str])] = &[
    (
        "trainer",
        &[
            "env",
            "mode",
            "seed",
            "iterations",
            "n_envs",
            "rollout_len",
            "alpha",
            "gamma",
            "hidden",
            "eval_episodes",
            "wall_clock",
        ],
    ),
    ("bptt", &["every", "horizon", "epochs", "agents", "lr", "max_grad_norm"]),
    (
        "ppo",
        &[
            "lr",
            "critic_lr",
            "gae_lambda",
            "clip_eps",
            "entropy_coef",
            "epochs",
            "minibatches",
            "max_grad_norm",
        ],
    ),
    ("run", &["seeds"]),
];

fn known(section: &str, key: &str) -> bool {
    KEYS.iter().any(|(s, keys)| *s == section && keys.contains(&key))
}

fn parse_value<T: FromStr>(e: &Entry) -> Result<T, ConfigError> {
    e.value.parse().map_err(|_| {
        ConfigError::at(e.line, format!("invalid value '{}' for {}.{}", e.value, e.section, e.key))
    })
}

fn parse_list<T: FromStr>(e: &Entry) -> Result<Vec<T>, ConfigError> {
    if e.value.trim().is_empty() {
        return Ok(Vec::new());
    }
    e.value
        .split(',')
        .map(|item| {
            item.trim().parse().map_err(|_| {
                ConfigError::at(e.line, format!("invalid list item '{}' for {}.{}", item.trim(), e.section, e.key))
            })
        })
        .collect()
}

fn apply(cfg: &mut RunConfig, e: &Entry) -> Result<(), ConfigError> {
    let t = &mut cfg.train;
    match (e.section.as_str(), e.key.as_str()) {
        ("trainer", "env") => t.env = parse_value(e)?,
        ("trainer", "mode") => t.mode = parse_value::<Mode>(e)?,
        ("trainer", "seed") => t.seed = parse_value(e)?,
        ("trainer", "iterations") => t.iterations = parse_value(e)?,
        ("trainer", "n_envs") => t.n_envs = parse_value(e)?,
        ("trainer", "rollout_len") => t.rollout_len = parse_value(e)?,
        ("trainer", "alpha") => t.alpha = parse_value(e)?,
        ("trainer", "gamma") => t.gamma = parse_value(e)?,
        ("trainer", "hidden") => t.hidden = parse_list(e)?,
        ("trainer", "eval_episodes") => t.eval_episodes = parse_value(e)?,
        ("trainer", "wall_clock") => t.wall_clock = parse_value(e)?,
        ("bptt", "every") => t.apg_every = parse_value(e)?,
        ("bptt", "horizon") => t.apg_horizon = parse_value(e)?,
        ("bptt", "epochs") => t.apg_epochs = parse_value(e)?,
        ("bptt", "agents") => t.apg_agents = parse_value(e)?,
        ("bptt", "lr") => t.apg_lr = parse_value(e)?,
        ("bptt", "max_grad_norm") => t.apg_max_grad_norm = parse_value(e)?,
        ("ppo", "lr") => t.ppo_lr = parse_value(e)?,
        ("ppo", "critic_lr") => t.critic_lr = parse_value(e)?,
        ("ppo", "gae_lambda") => t.gae_lambda = parse_value(e)?,
        ("ppo", "clip_eps") => t.clip_eps = parse_value(e)?,
        ("ppo", "entropy_coef") => t.entropy_coef = parse_value(e)?,
        ("ppo", "epochs") => t.ppo_epochs = parse_value(e)?,
        ("ppo", "minibatches") => t.minibatches = parse_value(e)?,
        ("ppo", "max_grad_norm") => t.max_grad_norm = parse_value(e)?,
        ("run", "seeds") => cfg.seeds = parse_list(e)?,
        _ => return Err(ConfigError::at(e.line, format!("unknown key {}.{}", e.section, e.key))),
    }
    Ok(())
}

fn read_entries(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut section: Option<String> = None;
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = Some(i + 1);
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::at(line, "unterminated section header"))?
                .trim();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                return Err(ConfigError::at(line, format!("unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::at(line, format!("expected 'key = value', found '{content}'")))?;
        let key = key.trim();
        let section = section
            .clone()
            .ok_or_else(|| ConfigError::at(line, format!("key '{key}' appears before any section header")))?;
        if !known(&section, key) {
            return Err(ConfigError::at(line, format!("unknown key {section}.{key}")));
        }
        entries.push(Entry { line, section, key: key.to_string(), value: value.trim().to_string() });
    }
    Ok(entries)
}

/// Parses a `section.key=value` override as given on the command line.
fn read_override(raw: &str) -> Result<Entry, ConfigError> {
    let bad = || ConfigError::at(None, format!("override '{raw}' is not of the form section.key=value"));
    let (path, value) = raw.split_once('=').ok_or_else(bad)?;
    let (section, key) = path.trim().split_once('.').ok_or_else(bad)?;
    if !known(section, key) {
        return Err(ConfigError::at(None, format!("unknown key {section}.{key} in override")));
    }
    Ok(Entry { line: None, section: section.into(), key: key.into(), value: value.trim().into() })
}

/// Builds a configuration from file text plus command-line overrides, which
/// win over the file. The environment must be named somewhere.
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut entries = read_entries(text)?;
    for o in overrides {
        entries.push(read_override(o)?);
    }
    let env_entry = entries
        .iter()
        .rev()
        .find(|e| e.section == "trainer" && e.key == "env")
        .ok_or_else(|| ConfigError::at(None, "missing required key trainer.env"))?;
    let env: EnvName = parse_value(env_entry)?;
    let mut cfg = RunConfig { train: TrainConfig::for_env(env), seeds: Vec::new() };
    for e in &entries {
        apply(&mut cfg, e)?;
    }
    if cfg.seeds.is_empty() {
        cfg.seeds.push(cfg.train.seed);
    }
    cfg.train
        .validate()
        .map_err(|err| ConfigError::at(None, err.to_string()))?;
    Ok(cfg)
}

pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    parse_with_overrides(text, &[])
}

/// Shortest representation that parses back to the same value.
fn real(x: f64) -> String {
    format!("{x:?}")
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// Writes every key explicitly, so the output does not depend on defaults.
pub fn serialize(cfg: &RunConfig) -> String {
    let t = &cfg.train;
    let mut out = String::new();
    let mut section = |name: &str, pairs: Vec<(&str, String)>| {
        out.push_str(&format!("[{name}]\n"));
        for (k, v) in pairs {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push('\n');
    };
    section(
        "trainer",
        vec![
            ("env", t.env.to_string()),
            ("mode", t.mode.to_string()),
            ("seed", t.seed.to_string()),
            ("iterations", t.iterations.to_string()),
            ("n_envs", t.n_envs.to_string()),
            ("rollout_len", t.rollout_len.to_string()),
            ("alpha", real(t.alpha)),
            ("gamma", real(t.gamma)),
            ("hidden", join(&t.hidden)),
            ("eval_episodes", t.eval_episodes.to_string()),
            ("wall_clock", t.wall_clock.to_string()),
        ],
    );
    section(
        "bptt",
        vec![
            ("every", t.apg_every.to_string()),
            ("horizon", t.apg_horizon.to_string()),
            ("epochs", t.apg_epochs.to_string()),
            ("agents", t.apg_agents.to_string()),
            ("lr", real(t.apg_lr)),
            ("max_grad_norm", real(t.apg_max_grad_norm)),
        ],
    );
    section(
        "ppo",
        vec![
            ("lr", real(t.ppo_lr)),
            ("critic_lr", real(t.critic_lr)),
            ("gae_lambda", real(t.gae_lambda)),
            ("clip_eps", real(t.clip_eps)),
            ("entropy_coef", real(t.entropy_coef)),
            ("epochs", t.ppo_epochs.to_string()),
            ("minibatches", t.minibatches.to_string()),
            ("max_grad_norm", real(t.max_grad_norm)),
        ],
    );
    section("run", vec![("seeds", join(&cfg.seeds))]);
    out.pop();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_environment_defaults() {
        let cfg = parse("[trainer]\nenv = cartpole\n").unwrap();
        assert_eq!(cfg.train, TrainConfig::for_env(EnvName::Cartpole));
        assert_eq!(cfg.seeds, vec![0]);
    }

    #[test]
    fn comments_and_overrides() {
        let text = "# a run\n[trainer]\nenv = pendulum # inline\niterations = 7\n\n[bptt]\nlr = 1e-4\n";
        let cfg = parse_with_overrides(text, &["trainer.iterations=3".into(), "ppo.clip_eps = 0.1".into()]).unwrap();
        assert_eq!(cfg.train.iterations, 3);
        assert_eq!(cfg.train.apg_lr, 1e-4);
        assert_eq!(cfg.train.clip_eps, 0.1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse("[trainer]\nenv = point_mass\n\nitertions = 5\n").unwrap_err();
        assert_eq!(err.line, Some(4));
        assert!(err.to_string().contains("trainer.itertions"));
        assert_eq!(parse("[trainer]\nenv = point_mass\n[optim]\n").unwrap_err().line, Some(3));
        assert_eq!(parse("env = point_mass\n").unwrap_err().line, Some(1));
        assert_eq!(parse("[trainer]\nenv = point_mass\nalpha = lots\n").unwrap_err().line, Some(3));
        assert_eq!(parse("[trainer]\nenv point_mass\n").unwrap_err().line, Some(2));
    }

    #[test]
    fn environment_is_required() {
        let err = parse("[trainer]\niterations = 2\n").unwrap_err();
        assert!(err.message.contains("trainer.env"));
        assert!(parse("[trainer]\nenv = moon_lander\n").is_err());
    }

    #[test]
    fn invalid_settings_are_rejected() {
        assert!(parse("[trainer]\nenv = point_mass\nalpha = 2\n").is_err());
        assert!(parse_with_overrides("[trainer]\nenv = point_mass\n", &["bptt.every=0".into()]).is_err());
        assert!(parse_with_overrides("[trainer]\nenv = point_mass\n", &["bptt.speed=1".into()]).is_err());
        assert!(parse_with_overrides("[trainer]\nenv = point_mass\n", &["iterations=1".into()]).is_err());
    }

    #[test]
    fn serialize_round_trips() {
        let text = "[trainer]\nenv = pendulum\nalpha = 0.3\nhidden = 32, 16\ngamma = 0.99\n[bptt]\nlr = 0.1234567890123\n[run]\nseeds = 4, 2\n";
        let first = parse(text).unwrap();
        let second = parse(&serialize(&first)).unwrap();
        assert_eq!(first, second);
        assert_eq!(serialize(&first), serialize(&second));
    }
}
