use super::mlp::MlpParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates laid out like [`MlpParams::flatten`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        let n = params.num_params();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step, in place.
pub fn adam_step(params: &mut MlpParams, state: &mut AdamState, grads: &MlpParams, lr: f64, cfg: AdamConfig) -> Result<()> {
    if !params.same_shape(grads) || state.m.len() != params.num_params() {
        return Err(Error::InvalidArgument("adam: parameter/gradient/state shapes differ".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut k = 0;
    for (p_block, g_block) in params.blocks_mut().into_iter().zip(grads.blocks()) {
        for (p, &g) in p_block.iter_mut().zip(g_block) {
            let m = &mut state.m[k];
            let v = &mut state.v[k];
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            k += 1;
        }
    }
    Ok(())
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut MlpParams, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
