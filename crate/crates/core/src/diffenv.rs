//! Deterministic differentiable toy environments.
//!
//! Every environment exposes its one-step dynamics `s' = f(s, a)`, the
//! reward `r(s, a)` evaluated at the pre-step state, and closed-form
//! Jacobians of both. Integration is semi-implicit Euler: velocities are
//! updated first and positions use the new velocity.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Mat;

pub const DT: f64 = 0.05;
pub const EPISODE_CAP: usize = 200;

const PM_DRAG: f64 = 0.1;
const PM_TARGET: [f64; 2] = [1.0, 1.0];

const PEND_G: f64 = 9.81;
const PEND_LEN: f64 = 1.0;
const PEND_MASS: f64 = 1.0;
const PEND_DAMP: f64 = 0.05;

const CP_G: f64 = 9.81;
const CP_CART_MASS: f64 = 1.0;
const CP_POLE_MASS: f64 = 0.1;
const CP_HALF_LEN: f64 = 0.5;
const CP_THETA_LIMIT: f64 = 0.2;
const CP_X_LIMIT: f64 = 2.4;
const CP_RESET_RANGE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub sim: Vec<f64>,
    pub step_count: usize,
    pub done: bool,
}

impl EnvState {
    pub fn new(sim: Vec<f64>) -> Self {
        Self {
            sim,
            step_count: 0,
            done: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub next: EnvState,
    pub reward: f64,
    /// The termination predicate held at `next` (as opposed to hitting the
    /// episode cap, which only sets `next.done`).
    pub terminated: bool,
    pub jac_f_s: Mat,
    pub jac_f_a: Mat,
    pub grad_r_s: Vec<f64>,
    pub grad_r_a: Vec<f64>,
}

impl StepOutput {
    /// Episode ended because of the time limit rather than a terminal state.
    pub fn truncated(&self) -> bool {
        self.next.done && !self.terminated
    }

    pub fn derivatives_finite(&self) -> bool {
        self.jac_f_s.is_finite()
            && self.jac_f_a.is_finite()
            && self.grad_r_s.iter().all(|x| x.is_finite())
            && self.grad_r_a.iter().all(|x| x.is_finite())
    }
}

/// A differentiable environment. Implemented by [`EnvSpec`] for the built-in
/// systems; tests provide their own implementations.
pub trait Dynamics {
    fn dim_s(&self) -> usize;
    fn dim_a(&self) -> usize;
    fn action_low(&self) -> &[f64];
    fn action_high(&self) -> &[f64];
    fn episode_cap(&self) -> usize;
    fn reset(&self, rng: &mut dyn RngCore) -> EnvState;
    fn step(&self, s: &EnvState, a: &[f64]) -> Result<StepOutput>;

    fn clip_action(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.action_low().iter().zip(self.action_high()))
            .map(|(&x, (&lo, &hi))| x.clamp(lo, hi))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvName {
    PointMass,
    Pendulum,
    Cartpole,
}

impl EnvName {
    pub const ALL: [EnvName; 3] = [EnvName::PointMass, EnvName::Pendulum, EnvName::Cartpole];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::PointMass => "point_mass",
            EnvName::Pendulum => "pendulum",
            EnvName::Cartpole => "cartpole",
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point_mass" => Ok(EnvName::PointMass),
            "pendulum" => Ok(EnvName::Pendulum),
            "cartpole" => Ok(EnvName::Cartpole),
            other => Err(Error::InvalidArgument(format!("unknown environment '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: EnvName,
    pub dim_s: usize,
    pub dim_a: usize,
    pub dt: f64,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub episode_cap: usize,
}

impl EnvSpec {
    pub fn new(name: EnvName) -> Self {
        let (dim_s, dim_a, bound) = match name {
            EnvName::PointMass => (4, 2, 1.0),
            EnvName::Pendulum => (2, 1, 2.0),
            EnvName::Cartpole => (4, 1, 10.0),
        };
        Self {
            name,
            dim_s,
            dim_a,
            dt: DT,
            action_low: vec![-bound; dim_a],
            action_high: vec![bound; dim_a],
            episode_cap: EPISODE_CAP,
        }
    }

    fn step_point_mass(&self, s: &[f64], a: &[f64]) -> Raw {
        let dt = self.dt;
        let keep = 1.0 - PM_DRAG * dt;
        let vx = keep * s[2] + dt * a[0];
        let vy = keep * s[3] + dt * a[1];
        let px = s[0] + dt * vx;
        let py = s[1] + dt * vy;

        let mut fs = Mat::zeros(4, 4);
        fs.set(0, 0, 1.0);
        fs.set(0, 2, dt * keep);
        fs.set(1, 1, 1.0);
        fs.set(1, 3, dt * keep);
        fs.set(2, 2, keep);
        fs.set(3, 3, keep);
        let mut fa = Mat::zeros(4, 2);
        fa.set(0, 0, dt * dt);
        fa.set(1, 1, dt * dt);
        fa.set(2, 0, dt);
        fa.set(3, 1, dt);

        let dx = s[0] - PM_TARGET[0];
        let dy = s[1] - PM_TARGET[1];
        let bump = (-(dx * dx + dy * dy)).exp();
        let reward = bump - 0.001 * (a[0] * a[0] + a[1] * a[1]);
        Raw {
            sim: vec![px, py, vx, vy],
            reward,
            terminated: false,
            fs,
            fa,
            rs: vec![-2.0 * dx * bump, -2.0 * dy * bump, 0.0, 0.0],
            ra: vec![-0.002 * a[0], -0.002 * a[1]],
        }
    }

    fn step_pendulum(&self, s: &[f64], a: &[f64]) -> Raw {
        let dt = self.dt;
        let (theta, omega, torque) = (s[0], s[1], a[0]);
        let inertia = PEND_MASS * PEND_LEN * PEND_LEN;
        let acc = -(PEND_G / PEND_LEN) * theta.sin() + torque / inertia - PEND_DAMP * omega;
        let omega_n = omega + dt * acc;
        let theta_n = theta + dt * omega_n;

        let dw_dth = -dt * (PEND_G / PEND_LEN) * theta.cos();
        let dw_dw = 1.0 - PEND_DAMP * dt;
        let dw_da = dt / inertia;
        let fs = Mat::from_rows(&[&[1.0 + dt * dw_dth, dt * dw_dw], &[dw_dth, dw_dw]]);
        let fa = Mat::from_rows(&[&[dt * dw_da], &[dw_da]]);

        let err = wrap_angle(theta - PI);
        let reward = -(err * err + 0.1 * omega * omega + 0.001 * torque * torque);
        Raw {
            sim: vec![theta_n, omega_n],
            reward,
            terminated: false,
            fs,
            fa,
            rs: vec![-2.0 * err, -0.2 * omega],
            ra: vec![-0.002 * torque],
        }
    }

    fn step_cartpole(&self, s: &[f64], a: &[f64]) -> Raw {
        let dt = self.dt;
        let (x, xd, th, thd, force) = (s[0], s[1], s[2], s[3], a[0]);
        let total = CP_CART_MASS + CP_POLE_MASS;
        let pml = CP_POLE_MASS * CP_HALF_LEN;
        let (sin, cos) = th.sin_cos();

        let temp = (force + pml * thd * thd * sin) / total;
        let temp_th = pml * thd * thd * cos / total;
        let temp_thd = 2.0 * pml * thd * sin / total;
        let temp_f = 1.0 / total;

        let den = CP_HALF_LEN * (4.0 / 3.0 - CP_POLE_MASS * cos * cos / total);
        let den_th = CP_HALF_LEN * 2.0 * CP_POLE_MASS * cos * sin / total;
        let num = CP_G * sin - cos * temp;
        let num_th = CP_G * cos + sin * temp - cos * temp_th;
        let num_thd = -cos * temp_thd;
        let num_f = -cos * temp_f;

        let thacc = num / den;
        let thacc_th = (num_th * den - num * den_th) / (den * den);
        let thacc_thd = num_thd / den;
        let thacc_f = num_f / den;

        let xacc = temp - pml * thacc * cos / total;
        let xacc_th = temp_th - pml / total * (thacc_th * cos - thacc * sin);
        let xacc_thd = temp_thd - pml / total * thacc_thd * cos;
        let xacc_f = temp_f - pml / total * thacc_f * cos;

        let xd_n = xd + dt * xacc;
        let x_n = x + dt * xd_n;
        let thd_n = thd + dt * thacc;
        let th_n = th + dt * thd_n;

        // Rows of d(xd', thd') wrt (x, xd, th, thd); positions chain through them.
        let dxd = [0.0, 1.0, dt * xacc_th, dt * xacc_thd];
        let dthd = [0.0, 0.0, dt * thacc_th, 1.0 + dt * thacc_thd];
        let mut fs = Mat::zeros(4, 4);
        for c in 0..4 {
            let ex = if c == 0 { 1.0 } else { 0.0 };
            let eth = if c == 2 { 1.0 } else { 0.0 };
            fs.set(0, c, ex + dt * dxd[c]);
            fs.set(1, c, dxd[c]);
            fs.set(2, c, eth + dt * dthd[c]);
            fs.set(3, c, dthd[c]);
        }
        let fa = Mat::from_rows(&[
            &[dt * dt * xacc_f],
            &[dt * xacc_f],
            &[dt * dt * thacc_f],
            &[dt * thacc_f],
        ]);

        let ratio = th / CP_THETA_LIMIT;
        let reward = 1.0 - ratio * ratio - 0.01 * (force / 10.0) * (force / 10.0);
        let terminated = th_n.abs() > CP_THETA_LIMIT || x_n.abs() > CP_X_LIMIT;
        Raw {
            sim: vec![x_n, xd_n, th_n, thd_n],
            reward,
            terminated,
            fs,
            fa,
            rs: vec![0.0, 0.0, -2.0 * th / (CP_THETA_LIMIT * CP_THETA_LIMIT), 0.0],
            ra: vec![-0.0002 * force],
        }
    }
}

struct Raw {
    sim: Vec<f64>,
    reward: f64,
    terminated: bool,
    fs: Mat,
    fa: Mat,
    rs: Vec<f64>,
    ra: Vec<f64>,
}

impl Dynamics for EnvSpec {
    fn dim_s(&self) -> usize {
        self.dim_s
    }

    fn dim_a(&self) -> usize {
        self.dim_a
    }

    fn action_low(&self) -> &[f64] {
        &self.action_low
    }

    fn action_high(&self) -> &[f64] {
        &self.action_high
    }

    fn episode_cap(&self) -> usize {
        self.episode_cap
    }

    fn reset(&self, rng: &mut dyn RngCore) -> EnvState {
        let sim = match self.name {
            EnvName::PointMass => {
                let px = uniform(rng, -0.5, 0.5);
                let py = uniform(rng, -0.5, 0.5);
                vec![px, py, 0.0, 0.0]
            }
            EnvName::Pendulum => {
                // (-pi, pi]: flip a half-open [0, 1) draw.
                let theta = PI - 2.0 * PI * rng.random::<f64>();
                let omega = uniform(rng, -1.0, 1.0);
                vec![theta, omega]
            }
            EnvName::Cartpole => (0..4)
                .map(|_| uniform(rng, -CP_RESET_RANGE, CP_RESET_RANGE))
                .collect(),
        };
        EnvState::new(sim)
    }

    fn step(&self, s: &EnvState, a: &[f64]) -> Result<StepOutput> {
        check_dim("state", s.sim.len(), self.dim_s)?;
        check_dim("action", a.len(), self.dim_a)?;
        if s.done {
            return Err(Error::InvalidState("step called on a finished episode".into()));
        }
        let raw = match self.name {
            EnvName::PointMass => self.step_point_mass(&s.sim, a),
            EnvName::Pendulum => self.step_pendulum(&s.sim, a),
            EnvName::Cartpole => self.step_cartpole(&s.sim, a),
        };
        let step_count = s.step_count + 1;
        Ok(StepOutput {
            next: EnvState {
                sim: raw.sim,
                step_count,
                done: raw.terminated || step_count >= self.episode_cap,
            },
            reward: raw.reward,
            terminated: raw.terminated,
            jac_f_s: raw.fs,
            jac_f_a: raw.fa,
            grad_r_s: raw.rs,
            grad_r_a: raw.ra,
        })
    }
}

fn uniform(rng: &mut dyn RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(x: f64) -> f64 {
    x - 2.0 * PI * ((x - PI) / (2.0 * PI)).ceil()
}

/// Max over all entries of the four derivative blocks of
/// `|analytic - central_fd| / max(1, |analytic|)`.
pub fn check_jacobians<D: Dynamics + ?Sized>(env: &D, s: &EnvState, a: &[f64], eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::InvalidArgument(format!("eps must be in (0, 1e-3], got {eps}")));
    }
    let base = env.step(s, a)?;
    let ds = env.dim_s();
    let da = env.dim_a();
    let mut worst: f64 = 0.0;
    let mut compare = |analytic: f64, fd: f64| {
        worst = worst.max((analytic - fd).abs() / analytic.abs().max(1.0));
    };

    for j in 0..ds {
        let mut plus = s.clone();
        let mut minus = s.clone();
        plus.sim[j] += eps;
        minus.sim[j] -= eps;
        let op = env.step(&plus, a)?;
        let om = env.step(&minus, a)?;
        for i in 0..ds {
            let fd = (op.next.sim[i] - om.next.sim[i]) / (2.0 * eps);
            compare(base.jac_f_s.get(i, j), fd);
        }
        compare(base.grad_r_s[j], (op.reward - om.reward) / (2.0 * eps));
    }
    for j in 0..da {
        let mut plus = a.to_vec();
        let mut minus = a.to_vec();
        plus[j] += eps;
        minus[j] -= eps;
        let op = env.step(s, &plus)?;
        let om = env.step(s, &minus)?;
        for i in 0..ds {
            let fd = (op.next.sim[i] - om.next.sim[i]) / (2.0 * eps);
            compare(base.jac_f_a.get(i, j), fd);
        }
        compare(base.grad_r_a[j], (op.reward - om.reward) / (2.0 * eps));
    }
    Ok(worst)
}
