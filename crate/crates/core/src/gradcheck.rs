//! Central finite-difference oracles for every hand-derived derivative in
//! the crate. The oracles only ever call forward evaluations (`step`,
//! `forward`, a standalone replay of the APG objective), never the
//! analytic backward passes they check.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};

use crate::bptt::{apg_backward, apg_rollout};
use crate::diffenv::{check_jacobians, wrap_angle, Dynamics, EnvName, EnvSpec, EnvState};
use crate::error::Result;
use crate::nets::{policy_backward, policy_forward, sample_reparam, value_backward, value_forward, MlpParams};
use crate::rng::SimRng;

/// `max |analytic - fd| / max(max |analytic|, 1e-12)`: error relative to
/// the largest gradient entry.
pub fn rel_error(analytic: &[f64], fd: &[f64]) -> f64 {
    assert_eq!(analytic.len(), fd.len());
    let scale = analytic.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
    analytic
        .iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs())
        .fold(0.0, f64::max)
        / scale
}

pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            probe[j] = x[j] + eps;
            let up = f(&probe);
            probe[j] = x[j] - eps;
            let down = f(&probe);
            probe[j] = x[j];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Random non-degenerate (state, action) for the Jacobian suite. Pendulum
/// angles within 1e-3 of the reward's wrap discontinuity are redrawn.
pub fn sample_env_point(env: &EnvSpec, rng: &mut dyn RngCore) -> (EnvState, Vec<f64>) {
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let sim = match env.name {
        EnvName::PointMass => vec![u(-2.0, 2.0), u(-2.0, 2.0), u(-2.0, 2.0), u(-2.0, 2.0)],
        EnvName::Pendulum => loop {
            let theta = u(-PI, PI);
            if wrap_angle(theta - PI).abs() < PI - 1e-3 {
                break vec![theta, u(-8.0, 8.0)];
            }
        },
        EnvName::Cartpole => vec![u(-2.0, 2.0), u(-3.0, 3.0), u(-1.0, 1.0), u(-3.0, 3.0)],
    };
    let action = env
        .action_low
        .iter()
        .zip(&env.action_high)
        .map(|(&lo, &hi)| u(lo, hi))
        .collect();
    (EnvState::new(sim), action)
}

/// Max Jacobian error over `samples` random points.
pub fn env_jacobian_suite(name: EnvName, samples: usize, seed: u64) -> Result<f64> {
    let env = EnvSpec::new(name);
    let mut rng = SimRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let (s, a) = sample_env_point(&env, &mut rng);
        worst = worst.max(check_jacobians(&env, &s, &a, 1e-5)?);
    }
    Ok(worst)
}

/// Errors of `policy_backward` for `L = upstream . a(theta, obs)`:
/// `(parameter gradient error, observation gradient error)`.
pub fn policy_gradcheck(params: &MlpParams, obs: &[f64], noise: &[f64], upstream: &[f64]) -> Result<(f64, f64)> {
    let objective = |p: &MlpParams, o: &[f64]| -> f64 {
        let a = sample_reparam(&policy_forward(p, o).unwrap(), noise);
        a.iter().zip(upstream).map(|(x, u)| x * u).sum()
    };
    let (g, gs) = policy_backward(params, obs, noise, upstream)?;
    let flat = params.flatten();
    let mut probe = params.clone();
    let fd_theta = fd_gradient(
        |x| {
            probe.assign_flat(x).unwrap();
            objective(&probe, obs)
        },
        &flat,
        1e-6,
    );
    let fd_s = fd_gradient(|o| objective(params, o), obs, 1e-6);
    Ok((rel_error(&g.flatten(), &fd_theta), rel_error(&gs, &fd_s)))
}

/// Same as [`policy_gradcheck`] for the critic's `V(obs)`.
pub fn value_gradcheck(params: &MlpParams, obs: &[f64]) -> Result<(f64, f64)> {
    let (g, gs) = value_backward(params, obs, 1.0)?;
    let flat = params.flatten();
    let mut probe = params.clone();
    let fd_phi = fd_gradient(
        |x| {
            probe.assign_flat(x).unwrap();
            value_forward(&probe, obs).unwrap()
        },
        &flat,
        1e-6,
    );
    let fd_s = fd_gradient(|o| value_forward(params, o).unwrap(), obs, 1e-6);
    Ok((rel_error(&g.flatten(), &fd_phi), rel_error(&gs, &fd_s)))
}

/// Standalone re-evaluation of the short-horizon objective from fixed start
/// states and fixed per-step noise (`noises[lane][t]`).
pub fn replay_loss<D: Dynamics + ?Sized>(
    env: &D,
    policy: &MlpParams,
    critic: &MlpParams,
    starts: &[EnvState],
    noises: &[Vec<Vec<f64>>],
    horizon: usize,
    gamma: f64,
) -> f64 {
    let mut total = 0.0;
    for (start, lane_noise) in starts.iter().zip(noises) {
        let mut s = start.clone();
        let mut disc = 1.0;
        for noise in lane_noise.iter().take(horizon) {
            if s.done {
                break;
            }
            let mean = policy.forward(&s.sim).unwrap().output().to_vec();
            let a: Vec<f64> = mean
                .iter()
                .zip(&policy.log_std)
                .zip(noise)
                .map(|((m, ls), e)| m + ls.exp() * e)
                .collect();
            let out = env.step(&s, &env.clip_action(&a)).unwrap();
            total += disc * out.reward;
            disc *= gamma;
            s = out.next;
        }
        total += disc * critic.forward(&s.sim).unwrap().output()[0];
    }
    -total / (starts.len() * horizon) as f64
}

#[derive(Debug, Clone, Copy)]
pub struct BpttCheck {
    pub rel_error: f64,
    /// Some sampled action hit the bounds (the FD oracle is then invalid).
    pub clipped: bool,
    /// Some lane hit a terminal state.
    pub terminated: bool,
}

/// Compares `apg_backward` with finite differences of [`replay_loss`] over
/// all policy parameters, replaying the rollout's resets and noise.
#[allow(clippy::too_many_arguments)]
pub fn bptt_gradcheck<D: Dynamics + ?Sized>(
    env: &D,
    policy: &MlpParams,
    critic: &MlpParams,
    n_agents: usize,
    horizon: usize,
    gamma: f64,
    seed: u64,
) -> Result<BpttCheck> {
    let mut rng = SimRng::seed_from_u64(seed);
    let (tape, _) = apg_rollout(env, policy, critic, n_agents, horizon, gamma, &mut rng)?;
    let analytic = apg_backward(&tape, policy, critic)?.flatten();
    let starts: Vec<EnvState> = tape.lanes.iter().map(|l| l.start.clone()).collect();
    let noises: Vec<Vec<Vec<f64>>> = tape
        .lanes
        .iter()
        .map(|l| l.steps.iter().map(|r| r.noise.clone()).collect())
        .collect();
    let mut probe = policy.clone();
    let fd = fd_gradient(
        |x| {
            probe.assign_flat(x).unwrap();
            replay_loss(env, &probe, critic, &starts, &noises, horizon, gamma)
        },
        &policy.flatten(),
        1e-6,
    );
    Ok(BpttCheck {
        rel_error: rel_error(&analytic, &fd),
        clipped: tape.any_clipped(),
        terminated: tape.lanes.iter().any(|l| l.terminated),
    })
}

/// Small random policy/critic pair for gradient checks: hidden sizes
/// `hidden`, policy output gain `out_gain`, log-std `log_std` (small enough
/// that sampled actions stay inside the bounds).
pub fn test_nets(env: &EnvSpec, hidden: &[usize], out_gain: f64, log_std: f64, seed: u64) -> (MlpParams, MlpParams) {
    let mut rng = SimRng::seed_from_u64(seed);
    let sizes = crate::nets::mlp_sizes(env.dim_s, hidden, env.dim_a);
    let mut policy = MlpParams::init(&sizes, env.dim_a, out_gain, &mut rng);
    policy.log_std.fill(log_std);
    for b in policy.biases.iter_mut().flatten() {
        *b = 0.1 * (2.0 * rng.random::<f64>() - 1.0);
    }
    let critic = MlpParams::init_critic(env.dim_s, hidden, &mut rng);
    (policy, critic)
}

#[derive(Debug, Clone)]
pub struct GradcheckLine {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
}

impl GradcheckLine {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

/// Every finite-difference suite: environment Jacobians (1000 points per
/// environment), policy and critic reverse passes (10 random nets each) and
/// the BPTT gradient over N in {1, 4}, h in {1, 2, 4, 8}.
pub fn run_all(seed: u64) -> Result<Vec<GradcheckLine>> {
    let mut lines = Vec::new();
    for name in EnvName::ALL {
        lines.push(GradcheckLine {
            name: format!("jacobian/{name}"),
            max_error: env_jacobian_suite(name, 1000, seed)?,
            tolerance: 1e-6,
        });
    }

    let mut rng = SimRng::seed_from_u64(seed ^ 0x5eed);
    let (mut pol_err, mut val_err) = (0.0f64, 0.0f64);
    for k in 0..10 {
        let obs_dim = 2 + k % 3;
        let act_dim = 1 + k % 2;
        let hidden = [3 + k % 5, 2 + k % 4];
        let mut p = MlpParams::init(&crate::nets::mlp_sizes(obs_dim, &hidden, act_dim), act_dim, 1.0, &mut rng);
        for s in p.log_std.iter_mut() {
            *s = rng.random::<f64>() - 0.5;
        }
        let c = MlpParams::init(&crate::nets::mlp_sizes(obs_dim, &hidden, 1), 0, 1.0, &mut rng);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect() };
        let obs = draw(obs_dim);
        let noise = draw(act_dim);
        let up = draw(act_dim);
        let (a, b) = policy_gradcheck(&p, &obs, &noise, &up)?;
        pol_err = pol_err.max(a).max(b);
        let (a, b) = value_gradcheck(&c, &obs)?;
        val_err = val_err.max(a).max(b);
    }
    lines.push(GradcheckLine {
        name: "nets/policy_backward".into(),
        max_error: pol_err,
        tolerance: 1e-6,
    });
    lines.push(GradcheckLine {
        name: "nets/value_backward".into(),
        max_error: val_err,
        tolerance: 1e-6,
    });

    for (name, tol) in [(EnvName::PointMass, 1e-4), (EnvName::Pendulum, 1e-4), (EnvName::Cartpole, 1e-3)] {
        let env = EnvSpec::new(name);
        let mut worst: f64 = 0.0;
        for n in [1, 4] {
            for h in [1, 2, 4, 8] {
                let (p, c) = test_nets(&env, &[8, 8], 0.5, -3.0, seed.wrapping_add((n * 16 + h) as u64));
                let check = bptt_gradcheck(&env, &p, &c, n, h, 0.95, seed.wrapping_add(h as u64))?;
                worst = worst.max(check.rel_error);
            }
        }
        lines.push(GradcheckLine {
            name: format!("bptt/{name}"),
            max_error: worst,
            tolerance: tol,
        });
    }
    Ok(lines)
}
