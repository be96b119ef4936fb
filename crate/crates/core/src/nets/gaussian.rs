//! Diagonal Gaussian policy head and scalar critic on top of [`MlpParams`].

use std::f64::consts::{E, PI};

use super::mlp::MlpParams;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn policy_forward(params: &MlpParams, obs: &[f64]) -> Result<PolicyOutput> {
    if !params.is_policy() {
        return Err(Error::InvalidArgument("policy_forward on a critic network".into()));
    }
    let trace = params.forward(obs)?;
    Ok(PolicyOutput {
        mean: trace.output().to_vec(),
        std: params.log_std.iter().map(|s| s.exp()).collect(),
    })
}

/// `a = mean + std * noise`.
pub fn sample_reparam(out: &PolicyOutput, noise: &[f64]) -> Vec<f64> {
    assert_eq!(noise.len(), out.mean.len(), "noise dimension");
    out.mean
        .iter()
        .zip(&out.std)
        .zip(noise)
        .map(|((m, s), e)| m + s * e)
        .collect()
}

pub fn log_prob(out: &PolicyOutput, a: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), out.mean.len());
    let ln_2pi = (2.0 * PI).ln();
    -0.5 * out
        .mean
        .iter()
        .zip(&out.std)
        .zip(a)
        .map(|((m, s), x)| {
            let z = (x - m) / s;
            z * z + 2.0 * s.ln() + ln_2pi
        })
        .sum::<f64>()
}

/// Entropy of the (state-independent) action distribution.
pub fn entropy(params: &MlpParams) -> f64 {
    let half_ln_2pie = 0.5 * (2.0 * PI * E).ln();
    params.log_std.iter().map(|s| half_ln_2pie + s).sum()
}

/// Accumulates `upstream * d(log pi(a|obs))/d(theta)` into `grad`.
pub fn log_prob_backward(params: &MlpParams, obs: &[f64], a: &[f64], upstream: f64, grad: &mut MlpParams) -> Result<()> {
    check_dim("action", a.len(), params.output_dim())?;
    let trace = params.forward(obs)?;
    let mean = trace.output();
    let mut d_mean = Vec::with_capacity(a.len());
    for (j, (&x, &m)) in a.iter().zip(mean).enumerate() {
        let var = (2.0 * params.log_std[j]).exp();
        let diff = x - m;
        d_mean.push(upstream * diff / var);
        grad.log_std[j] += upstream * (diff * diff / var - 1.0);
    }
    params.backward_into(&trace, &d_mean, grad);
    Ok(())
}

/// Vector-Jacobian product of `a = mean_theta(obs) + exp(log_std) * noise`
/// with `upstream = dL/da`. Returns `(dL/dtheta, dL/dobs)`.
pub fn policy_backward(params: &MlpParams, obs: &[f64], noise: &[f64], upstream: &[f64]) -> Result<(MlpParams, Vec<f64>)> {
    let mut grad = params.zeros_like();
    let grad_s = policy_backward_into(params, obs, noise, upstream, &mut grad)?;
    Ok((grad, grad_s))
}

pub fn policy_backward_into(
    params: &MlpParams,
    obs: &[f64],
    noise: &[f64],
    upstream: &[f64],
    grad: &mut MlpParams,
) -> Result<Vec<f64>> {
    check_dim("noise", noise.len(), params.output_dim())?;
    check_dim("upstream", upstream.len(), params.output_dim())?;
    let trace = params.forward(obs)?;
    for j in 0..upstream.len() {
        grad.log_std[j] += upstream[j] * params.log_std[j].exp() * noise[j];
    }
    Ok(params.backward_into(&trace, upstream, grad))
}

pub fn value_forward(params: &MlpParams, obs: &[f64]) -> Result<f64> {
    check_dim("critic output", params.output_dim(), 1)?;
    Ok(params.forward(obs)?.output()[0])
}

/// Returns `(upstream * dV/dphi, upstream * dV/dobs)`.
pub fn value_backward(params: &MlpParams, obs: &[f64], upstream: f64) -> Result<(MlpParams, Vec<f64>)> {
    let mut grad = params.zeros_like();
    let grad_s = value_backward_into(params, obs, upstream, &mut grad)?;
    Ok((grad, grad_s))
}

pub fn value_backward_into(params: &MlpParams, obs: &[f64], upstream: f64, grad: &mut MlpParams) -> Result<Vec<f64>> {
    check_dim("critic output", params.output_dim(), 1)?;
    let trace = params.forward(obs)?;
    Ok(params.backward_into(&trace, &[upstream], grad))
}
