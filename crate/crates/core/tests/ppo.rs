//! PPO machinery: GAE against a brute-force oracle, loss gradients against
//! finite differences, and the data-source contracts of the update.

use apgx::diffenv::{Dynamics, EnvName, EnvSpec, EnvState, StepOutput};
use apgx::gradcheck::{fd_gradient, rel_error};
use apgx::linalg::Mat;
use apgx::nets::{log_prob, policy_forward, value_forward, MlpParams};
use apgx::ppo::*;
use apgx::rng::SimRng;
use apgx::Result;
use proptest::prelude::*;
use rand::{Rng, RngCore, SeedableRng};

/// Direct definition: A_t = sum_l (gamma lambda)^l delta_{t+l} up to and
/// including the transition that closes the segment.
fn brute_force_gae(r: &[f64], v: &[f64], done: &[bool], trunc: &[bool], boot: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| {
            let next = if done[t] {
                0.0
            } else if trunc[t] {
                boot[t]
            } else {
                v[t + 1]
            };
            r[t] + gamma * next - v[t]
        })
        .collect();
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            let mut w = 1.0;
            for l in t..n {
                acc += w * delta[l];
                if done[l] || trunc[l] {
                    break;
                }
                w *= gamma * lambda;
            }
            acc
        })
        .collect()
}

struct Episode {
    r: Vec<f64>,
    v: Vec<f64>,
    done: Vec<bool>,
    trunc: Vec<bool>,
    boot: Vec<f64>,
}

fn random_episode(rng: &mut SimRng, allow_trunc: bool) -> Episode {
    let n = rng.random_range(1..=20);
    let mut e = Episode {
        r: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        v: (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
        done: (0..n).map(|_| rng.random_bool(0.1)).collect(),
        trunc: vec![false; n],
        boot: vec![0.0; n],
    };
    if allow_trunc {
        for t in 0..n {
            if !e.done[t] && rng.random_bool(0.1) {
                e.trunc[t] = true;
                e.boot[t] = rng.random_range(-3.0..3.0);
            }
        }
    }
    if !e.done[n - 1] && !e.trunc[n - 1] {
        if allow_trunc && rng.random_bool(0.5) {
            e.trunc[n - 1] = true;
            e.boot[n - 1] = rng.random_range(-3.0..3.0);
        } else {
            e.done[n - 1] = true;
        }
    }
    e
}

#[test]
fn gae_matches_brute_force_on_random_episodes() {
    let mut rng = SimRng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let e = random_episode(&mut rng, true);
        let fast = gae_lane(&e.r, &e.v, &e.done, &e.trunc, &e.boot, 0.9, 0.8).unwrap();
        let slow = brute_force_gae(&e.r, &e.v, &e.done, &e.trunc, &e.boot, 0.9, 0.8);
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst <= 1e-12, "{worst:e}");
}

#[test]
fn gae_with_unit_lambda_gives_monte_carlo_returns() {
    let mut rng = SimRng::seed_from_u64(77);
    let gamma = 0.97;
    for _ in 0..1000 {
        let e = random_episode(&mut rng, false);
        let adv = gae_lane(&e.r, &e.v, &e.done, &e.trunc, &e.boot, gamma, 1.0).unwrap();
        for t in 0..e.r.len() {
            let mut mc = 0.0;
            let mut w = 1.0;
            for l in t..e.r.len() {
                mc += w * e.r[l];
                if e.done[l] {
                    break;
                }
                w *= gamma;
            }
            assert!((adv[t] + e.v[t] - mc).abs() <= 1e-10);
        }
    }
}

fn small_nets(env: &EnvSpec, seed: u64) -> (MlpParams, MlpParams) {
    let mut rng = SimRng::seed_from_u64(seed);
    let mut p = MlpParams::init_policy(env.dim_s, &[8, 8], env.dim_a, &mut rng);
    // Spread the policy outputs a little so gradients are not dominated by noise.
    p.weights[2].iter_mut().for_each(|w| *w *= 50.0);
    let c = MlpParams::init_critic(env.dim_s, &[8, 8], &mut rng);
    (p, c)
}

#[test]
fn collect_shapes_and_determinism() {
    let env = EnvSpec::new(EnvName::PointMass);
    let (p, c) = small_nets(&env, 1);
    let b = collect_rollout(&env, &p, Some(&c), 2, 3, &mut SimRng::seed_from_u64(5), Source::Explore).unwrap();
    assert_eq!(b.len(), 6);
    assert!(b.transitions.iter().all(|t| t.source == Source::Explore));
    assert!(b.lane(0)[2].truncated && b.lane(1)[2].truncated);
    let again = collect_rollout(&env, &p, Some(&c), 2, 3, &mut SimRng::seed_from_u64(5), Source::Explore).unwrap();
    assert_eq!(b, again);
    for t in &b.transitions {
        let lp = log_prob(&policy_forward(&p, &t.obs).unwrap(), &t.action);
        assert_eq!(lp, t.behavior_log_prob);
        assert_eq!(t.value, Some(value_forward(&c, &t.obs).unwrap()));
    }
}

#[test]
fn vanishing_std_follows_mean_policy() {
    let env = EnvSpec::new(EnvName::Pendulum);
    let (mut p, _) = small_nets(&env, 2);
    p.log_std.fill(-300.0);
    let mut rng = SimRng::seed_from_u64(8);
    let b = collect_rollout(&env, &p, None, 1, 20, &mut rng, Source::Primary).unwrap();
    let mut s = b.transitions[0].obs.clone();
    let mut state = EnvState::new(s.clone());
    for t in &b.transitions {
        assert_eq!(t.obs, s);
        let mean = policy_forward(&p, &s).unwrap().mean;
        let out = env.step(&state, &env.clip_action(&mean)).unwrap();
        assert_eq!(t.reward, out.reward);
        state = out.next;
        s = state.sim.clone();
    }
}

/// Terminates every third step with reward 1; used for segment handling.
struct Blinker {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl Dynamics for Blinker {
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
        100
    }
    fn reset(&self, _rng: &mut dyn RngCore) -> EnvState {
        EnvState::new(vec![0.0])
    }
    fn step(&self, s: &EnvState, _a: &[f64]) -> Result<StepOutput> {
        let terminated = s.step_count + 1 == 3;
        Ok(StepOutput {
            next: EnvState {
                sim: vec![s.sim[0] + 1.0],
                step_count: s.step_count + 1,
                done: terminated,
            },
            reward: 1.0,
            terminated,
            jac_f_s: Mat::zeros(1, 1),
            jac_f_a: Mat::zeros(1, 1),
            grad_r_s: vec![0.0],
            grad_r_a: vec![0.0],
        })
    }
}

#[test]
fn auto_reset_and_segment_flags() {
    let env = Blinker { low: vec![-1.0], high: vec![1.0] };
    let p = MlpParams::zeros(&[1, 1], 1);
    let c = MlpParams::zeros(&[1, 1], 0);
    let mut b = collect_rollout(&env, &p, Some(&c), 1, 7, &mut SimRng::seed_from_u64(0), Source::Primary).unwrap();
    let done: Vec<bool> = b.transitions.iter().map(|t| t.done).collect();
    assert_eq!(done, vec![false, false, true, false, false, true, false]);
    assert!(b.transitions[6].truncated);
    assert_eq!(b.episode_returns, vec![3.0, 3.0]);
    compute_gae(&mut b, 1.0, 1.0).unwrap();
    assert_eq!(b.returns.unwrap(), vec![3.0, 2.0, 1.0, 3.0, 2.0, 1.0, 1.0]);
}

fn gae_batch(seed: u64, explore_lanes: usize) -> (EnvSpec, MlpParams, MlpParams, RolloutBatch) {
    let env = EnvSpec::new(EnvName::PointMass);
    let (p, c) = small_nets(&env, seed);
    let mut rng = SimRng::seed_from_u64(seed + 1);
    let mut batch = collect_rollout(&env, &p, Some(&c), 3, 10, &mut rng, Source::Primary).unwrap();
    if explore_lanes > 0 {
        let mut q = p.clone();
        q.biases[2].iter_mut().for_each(|b| *b += 0.3);
        let extra = collect_rollout(&env, &q, Some(&c), explore_lanes, 10, &mut rng, Source::Explore).unwrap();
        batch = batch.merge(extra).unwrap();
    }
    compute_gae(&mut batch, 0.95, 0.95).unwrap();
    (env, p, c, batch)
}

#[test]
fn compute_gae_requires_values() {
    let env = EnvSpec::new(EnvName::PointMass);
    let (p, c) = small_nets(&env, 4);
    let mut b = collect_rollout(&env, &p, None, 1, 4, &mut SimRng::seed_from_u64(0), Source::Primary).unwrap();
    assert!(matches!(compute_gae(&mut b, 0.9, 0.9), Err(apgx::Error::InvalidState(_))));
    b.refresh_values(&c).unwrap();
    compute_gae(&mut b, 0.9, 0.9).unwrap();
}

#[test]
fn ratios_before_update() {
    let (_, p, _, batch) = gae_batch(10, 2);
    let r = ratios(&p, &batch).unwrap();
    for (ratio, t) in r.iter().zip(&batch.transitions) {
        match t.source {
            Source::Primary => assert!((ratio - 1.0).abs() <= 1e-12),
            Source::Explore => {
                let mut q = p.clone();
                q.biases[2].iter_mut().for_each(|b| *b += 0.3);
                let want = (log_prob(&policy_forward(&p, &t.obs).unwrap(), &t.action)
                    - log_prob(&policy_forward(&q, &t.obs).unwrap(), &t.action))
                .exp();
                assert!((ratio - want).abs() <= 1e-12 * want.max(1.0));
            }
        }
    }
}

#[test]
fn policy_loss_gradient_matches_finite_differences() {
    let (_, p, _, batch) = gae_batch(11, 2);
    let adv = batch.advantages.clone().unwrap();
    // Move the policy so that some ratios leave the clip range, then keep
    // only samples whose ratio is away from the kinks at 1 +/- eps.
    let mut theta = p.clone();
    theta.biases[2].iter_mut().for_each(|b| *b += 0.15);
    let r = ratios(&theta, &batch).unwrap();
    let keep: Vec<usize> = (0..batch.len())
        .filter(|&i| (r[i] - 0.8).abs() > 0.02 && (r[i] - 1.2).abs() > 0.02)
        .collect();
    assert!(keep.len() > 20);
    let samples: Vec<PolicySample> = keep
        .iter()
        .map(|&i| PolicySample {
            obs: &batch.transitions[i].obs,
            action: &batch.transitions[i].action,
            behavior_log_prob: batch.transitions[i].behavior_log_prob,
            advantage: adv[i],
        })
        .collect();
    let (_, g) = ppo_policy_loss(&theta, &samples, 0.2, 0.01).unwrap();
    let mut probe = theta.clone();
    let fd = fd_gradient(
        |x| {
            probe.assign_flat(x).unwrap();
            ppo_policy_loss(&probe, &samples, 0.2, 0.01).unwrap().0
        },
        &theta.flatten(),
        1e-6,
    );
    let err = rel_error(&g.flatten(), &fd);
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn value_loss_gradient_matches_finite_differences() {
    let (_, _, c, batch) = gae_batch(12, 0);
    let (_, g) = value_loss_on_batch(&c, &batch).unwrap();
    let mut probe = c.clone();
    let fd = fd_gradient(
        |x| {
            probe.assign_flat(x).unwrap();
            value_loss_on_batch(&probe, &batch).unwrap().0
        },
        &c.flatten(),
        1e-6,
    );
    let err = rel_error(&g.flatten(), &fd);
    assert!(err < 1e-6, "{err:e}");
}

fn corrupt_explore(batch: &mut RolloutBatch, rng: &mut SimRng) {
    let adv = batch.advantages.as_mut().unwrap();
    let ret = batch.returns.as_mut().unwrap();
    for (i, t) in batch.transitions.iter_mut().enumerate() {
        if t.source == Source::Explore {
            t.reward = rng.random_range(-100.0..100.0);
            t.obs.iter_mut().for_each(|o| *o += rng.random_range(-5.0..5.0));
            adv[i] = rng.random_range(-100.0..100.0);
            ret[i] = rng.random_range(-100.0..100.0);
        }
    }
}

#[test]
fn critic_ignores_explore_samples() {
    let (_, p, c, batch) = gae_batch(13, 3);
    let mut other = batch.clone();
    corrupt_explore(&mut other, &mut SimRng::seed_from_u64(0));
    assert_eq!(value_loss_on_batch(&c, &batch).unwrap(), value_loss_on_batch(&c, &other).unwrap());

    let cfg = PpoConfig::default();
    let run = |b: &RolloutBatch| {
        let (mut pp, mut cc) = (p.clone(), c.clone());
        let mut opt = PpoOptim::new(&pp, &cc);
        ppo_update(&mut pp, &mut cc, b, &cfg, &mut opt, &mut SimRng::seed_from_u64(3)).unwrap();
        (pp, cc)
    };
    let (p1, c1) = run(&batch);
    let (p2, c2) = run(&other);
    assert_eq!(c1, c2);
    assert_ne!(p1, p2);
}

#[test]
fn update_is_deterministic_and_zero_advantage_is_a_policy_noop() {
    let (_, p, c, batch) = gae_batch(14, 2);
    let cfg = PpoConfig::default();
    let run = |b: &RolloutBatch, cfg: &PpoConfig| {
        let (mut pp, mut cc) = (p.clone(), c.clone());
        let mut opt = PpoOptim::new(&pp, &cc);
        let stats = ppo_update(&mut pp, &mut cc, b, cfg, &mut opt, &mut SimRng::seed_from_u64(9)).unwrap();
        (pp, cc, opt, stats)
    };
    let a = run(&batch, &cfg);
    let b = run(&batch, &cfg);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert!(a.3.initial_primary_ratio_dev <= 1e-12);

    let mut flat = batch.clone();
    flat.advantages.as_mut().unwrap().fill(0.0);
    let no_entropy = PpoConfig { entropy_coef: 0.0, ..cfg };
    let (pp, _, _, _) = run(&flat, &no_entropy);
    assert_eq!(pp, p);
}

#[test]
fn update_requires_advantages_and_primary_data() {
    let env = EnvSpec::new(EnvName::PointMass);
    let (mut p, mut c) = small_nets(&env, 15);
    let mut opt = PpoOptim::new(&p, &c);
    let raw = collect_rollout(&env, &p, Some(&c), 1, 4, &mut SimRng::seed_from_u64(0), Source::Explore).unwrap();
    let cfg = PpoConfig::default();
    assert!(ppo_update(&mut p, &mut c, &raw, &cfg, &mut opt, &mut SimRng::seed_from_u64(0)).is_err());
    let mut only_explore = raw;
    compute_gae(&mut only_explore, 0.9, 0.9).unwrap();
    assert!(matches!(
        ppo_update(&mut p, &mut c, &only_explore, &cfg, &mut opt, &mut SimRng::seed_from_u64(0)),
        Err(apgx::Error::InvalidArgument(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gae_recursion_equals_definition(seed in any::<u64>(), gamma in 0.5f64..1.0, lambda in 0.0f64..=1.0) {
        let mut rng = SimRng::seed_from_u64(seed);
        let e = random_episode(&mut rng, true);
        let fast = gae_lane(&e.r, &e.v, &e.done, &e.trunc, &e.boot, gamma, lambda).unwrap();
        let slow = brute_force_gae(&e.r, &e.v, &e.done, &e.trunc, &e.boot, gamma, lambda);
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
