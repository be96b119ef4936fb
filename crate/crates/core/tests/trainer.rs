//! Orchestration: schedules, accounting, the alpha = 0 reduction, metrics
//! and evaluation.

use apgx::diffenv::{Dynamics, EnvName, EnvSpec, EnvState, StepOutput};
use apgx::linalg::Mat;
use apgx::nets::MlpParams;
use apgx::ppo::{collect_rollout, Source};
use apgx::rng::SimRng;
use apgx::trainer::*;
use apgx::Result;
use rand::{RngCore, SeedableRng};

fn small(env: EnvName, mode: Mode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        seed,
        iterations: 4,
        n_envs: 8,
        rollout_len: 16,
        apg_agents: 16,
        hidden: vec![16, 16],
        eval_episodes: 2,
        ..TrainConfig::for_env(env)
    }
}

fn csv_bytes(rows: &[IterationMetrics]) -> Vec<u8> {
    let mut out = Vec::new();
    write_metrics_csv(&mut out, rows).unwrap();
    out
}

#[test]
fn zero_alpha_reproduces_the_baseline() {
    for env in EnvName::ALL {
        let aug = train(TrainConfig { alpha: 0.0, ..small(env, Mode::Augmented, 3) }).unwrap();
        let base = train(small(env, Mode::PpoBaseline, 3)).unwrap();
        assert_eq!(csv_bytes(&aug.metrics), csv_bytes(&base.metrics));
        assert_eq!(aug.policy, base.policy);
        assert_eq!(aug.critic, base.critic);
    }
}

#[test]
fn env_step_accounting_follows_the_schedule() {
    let cfg = TrainConfig { apg_every: 2, iterations: 5, ..small(EnvName::PointMass, Mode::Augmented, 1) };
    let out = train(cfg.clone()).unwrap();
    let ppo = cfg.n_envs * cfg.rollout_len;
    let apg = cfg.apg_agents * cfg.apg_horizon * cfg.apg_epochs;
    let mut prev = 0;
    for (k, m) in out.metrics.iter().enumerate() {
        assert_eq!(m.iteration, k);
        assert_eq!(m.env_steps, cfg.scheduled_env_steps(k + 1));
        let expected = if k % 2 == 0 { ppo + apg } else { ppo };
        assert_eq!(m.env_steps - prev, expected);
        assert_eq!(m.apg_loss_trace.len(), if k % 2 == 0 { cfg.apg_epochs } else { 0 });
        assert_eq!(m.adv_gap.is_finite(), k % 2 == 0);
        prev = m.env_steps;
    }
}

#[test]
fn apg_only_counts_only_apg_steps() {
    let cfg = small(EnvName::Pendulum, Mode::ApgOnly, 2);
    let out = train(cfg.clone()).unwrap();
    for (k, m) in out.metrics.iter().enumerate() {
        assert_eq!(m.env_steps, (k + 1) * cfg.apg_agents * cfg.apg_horizon * cfg.apg_epochs);
        assert!(m.eval_return_mean.is_finite());
        assert!(m.apg_loss().is_finite());
        assert!(m.adv_gap.is_nan());
    }
}

#[test]
fn default_point_mass_row_runs_with_finite_metrics() {
    let cfg = TrainConfig { iterations: 3, ..TrainConfig::for_env(EnvName::PointMass) };
    assert_eq!((cfg.apg_every, cfg.apg_horizon, cfg.apg_agents, cfg.apg_epochs), (1, 4, 256, 5));
    assert_eq!((cfg.apg_lr, cfg.gamma, cfg.alpha), (3e-5, 0.95, 0.5));
    let out = train(cfg).unwrap();
    for m in &out.metrics {
        assert!(!m.apg_failed);
        for v in [m.eval_return_mean, m.eval_return_std, m.adv_primary_mean, m.adv_explore_mean, m.adv_gap, m.apg_loss()] {
            assert!(v.is_finite());
        }
    }
    assert!(out.policy.all_finite() && out.critic.all_finite());
}

#[test]
fn primary_ratios_start_at_one() {
    let mut t = Trainer::new(small(EnvName::Cartpole, Mode::Augmented, 4)).unwrap();
    for _ in 0..10 {
        let m = t.step().unwrap();
        assert!(m.initial_primary_ratio_dev <= 1e-12);
    }
}

#[test]
fn same_seed_same_bytes() {
    let cfg = small(EnvName::Pendulum, Mode::Augmented, 9);
    assert_eq!(csv_bytes(&train(cfg.clone()).unwrap().metrics), csv_bytes(&train(cfg.clone()).unwrap().metrics));
    let other = train(TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(csv_bytes(&other.metrics), csv_bytes(&train(small(EnvName::Pendulum, Mode::Augmented, 9)).unwrap().metrics));
}

#[test]
fn csv_has_the_fixed_schema() {
    let out = train(small(EnvName::PointMass, Mode::Augmented, 0)).unwrap();
    let bytes = csv_bytes(&out.metrics);
    assert!(!bytes.contains(&b'\r'));
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(bytes.as_slice());
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, CSV_HEADER);
    let mut rows = 0;
    for record in reader.records() {
        let record = record.unwrap();
        assert_eq!(record.len(), 10);
        for field in record.iter() {
            let v: f64 = field.parse().unwrap();
            assert!(v.is_finite() || field == "NaN");
            assert!(!field.contains('e'));
        }
        rows += 1;
    }
    assert_eq!(rows, 4);
}

#[test]
fn floats_are_written_with_full_precision() {
    for x in [0.1, -123.456789012345, 1e-9, 6.02e23, 1.0 / 3.0] {
        let s = format_float(x);
        assert!(!s.contains('e'));
        assert_eq!(s.parse::<f64>().unwrap(), x);
    }
    assert_eq!(format_float(f64::NAN), "NaN");
    assert_eq!(format_float(0.0), "0");
}

#[test]
fn gap_arithmetic() {
    let env = EnvSpec::new(EnvName::PointMass);
    let mut rng = SimRng::seed_from_u64(0);
    let p = MlpParams::init_policy(4, &[8], 2, &mut rng);
    let a = collect_rollout(&env, &p, None, 2, 5, &mut rng, Source::Primary).unwrap();
    let b = collect_rollout(&env, &p, None, 1, 5, &mut rng, Source::Explore).unwrap();
    let mut only_primary = a.clone();
    only_primary.advantages = Some(vec![0.0; 10]);
    assert_eq!(advantage_gap(&only_primary), None);
    let mut merged = a.merge(b).unwrap();
    let adv = merged.transitions.iter().map(|t| if t.source == Source::Explore { 1.0 } else { -1.0 }).collect();
    merged.advantages = Some(adv);
    assert_eq!(advantage_gap(&merged), Some(2.0));
}

#[test]
fn gap_is_centered_when_policies_coincide() {
    let gaps: Vec<f64> = (0..20)
        .map(|seed| {
            let cfg = TrainConfig { apg_epochs: 0, iterations: 1, ..small(EnvName::PointMass, Mode::Augmented, seed) };
            train(cfg).unwrap().metrics[0].adv_gap
        })
        .collect();
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
}

#[test]
fn primary_advantages_center_as_the_critic_fits() {
    let cfg = TrainConfig { iterations: 50, mode: Mode::PpoBaseline, ..TrainConfig::for_env(EnvName::PointMass) };
    let out = train(cfg).unwrap();
    let last = out.metrics.last().unwrap();
    assert!(last.adv_primary_mean.abs() < 0.5, "{}", last.adv_primary_mean);
}

#[test]
fn config_validation() {
    let base = TrainConfig::for_env(EnvName::PointMass);
    assert!(base.validate().is_ok());
    assert!(TrainConfig { apg_every: 0, ..base.clone() }.validate().is_err());
    assert!(TrainConfig { alpha: 1.5, ..base.clone() }.validate().is_err());
    assert!(TrainConfig { gamma: 0.0, ..base.clone() }.validate().is_err());
    assert!(TrainConfig { apg_lr: -1.0, ..base.clone() }.validate().is_err());
    assert!(Trainer::new(TrainConfig { n_envs: 0, ..base.clone() }).is_err());

    let odd = TrainConfig { n_envs: 7, alpha: 0.5, ..base.clone() };
    assert_eq!((odd.explore_lanes(), odd.primary_lanes()), (3, 4));
    let all = TrainConfig { alpha: 1.0, ..base.clone() };
    assert_eq!((all.explore_lanes(), all.primary_lanes()), (63, 1));
    let none = TrainConfig { alpha: 0.0, ..base };
    assert_eq!(none.explore_lanes(), 0);
    assert!(!none.explores_at(0));
}

#[test]
fn mode_names_round_trip() {
    for m in Mode::ALL {
        assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
    }
    assert!("ppo".parse::<Mode>().is_err());
}

struct Silent {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl Dynamics for Silent {
    fn dim_s(&self) -> usize {
        1
    }
    fn dim_a(&self) -> usize {
        1
    }
    fn action_low(&self) -> &[f64] {
        &self.low
    }
    fn action_high(&self) -> &[f64] {
        &self.high
    }
    fn episode_cap(&self) -> usize {
        10
    }
    fn reset(&self, rng: &mut dyn RngCore) -> EnvState {
        EnvState::new(vec![(rng.next_u32() % 7) as f64])
    }
    fn step(&self, s: &EnvState, a: &[f64]) -> Result<StepOutput> {
        let next = EnvState {
            sim: vec![s.sim[0] + a[0]],
            step_count: s.step_count + 1,
            done: s.step_count + 1 >= 10,
        };
        Ok(StepOutput {
            next,
            reward: 0.0,
            terminated: false,
            jac_f_s: Mat::zeros(1, 1),
            jac_f_a: Mat::zeros(1, 1),
            grad_r_s: vec![0.0],
            grad_r_a: vec![0.0],
        })
    }
}

#[test]
fn evaluation_statistics() {
    let silent = Silent { low: vec![-1.0], high: vec![1.0] };
    let p = MlpParams::init_policy(1, &[4], 1, &mut SimRng::seed_from_u64(0));
    assert_eq!(evaluate(&p, &silent, 5, &mut SimRng::seed_from_u64(1)).unwrap(), (0.0, 0.0));
    assert!(evaluate(&p, &silent, 0, &mut SimRng::seed_from_u64(1)).is_err());

    let env = EnvSpec::new(EnvName::Pendulum);
    let p = MlpParams::init_policy(2, &[8], 1, &mut SimRng::seed_from_u64(0));
    let (_, std) = evaluate(&p, &env, 1, &mut SimRng::seed_from_u64(3)).unwrap();
    assert_eq!(std, 0.0);
    let first = evaluate(&p, &env, 4, &mut SimRng::seed_from_u64(3)).unwrap();
    let second = evaluate(&p, &env, 4, &mut SimRng::seed_from_u64(3)).unwrap();
    assert_eq!(first, second);
    assert!(first.1 > 0.0);
}

#[test]
fn trainer_exposes_the_last_batch() {
    let mut t = Trainer::new(small(EnvName::PointMass, Mode::Augmented, 5)).unwrap();
    assert!(t.last_batch().is_none());
    let m = t.step().unwrap();
    let batch = t.last_batch().unwrap();
    assert_eq!(batch.len(), 8 * 16);
    assert_eq!(batch.indices_of(Source::Explore).len(), 4 * 16);
    assert_eq!(advantage_gap(batch), Some(m.adv_gap));
    assert_eq!(t.iteration(), 1);
    assert_eq!(t.env_steps(), m.env_steps);
}
