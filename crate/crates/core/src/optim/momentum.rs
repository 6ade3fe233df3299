//! Nesterov-family outer optimizers.
//!
//! All of them use the deep-learning form of Nesterov momentum:
//! `v <- mu * v + g; theta <- theta - eta * (g + mu * v)`.

use serde::{Deserialize, Serialize};

use super::{check_shapes, OptimError, StepOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NesterovVelocity {
    pub v: Vec<f64>,
}

impl NesterovVelocity {
    pub fn zeros(dim: usize) -> Self {
        Self { v: vec![0.0; dim] }
    }
}

/// Gradient accumulator for Delayed Nesterov.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayBuffer {
    pub accumulated: Vec<f64>,
    pub count: u64,
    pub rounds_since_burst: u64,
}

impl DelayBuffer {
    pub fn zeros(dim: usize) -> Self {
        Self {
            accumulated: vec![0.0; dim],
            count: 0,
            rounds_since_burst: 0,
        }
    }
}

fn scaled(grad: &[f64], scale: f64) -> Vec<f64> {
    grad.iter().map(|g| scale * g).collect()
}

pub fn nesterov_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut NesterovVelocity,
    eta: f64,
    mu: f64,
) -> Result<StepOutcome, OptimError> {
    mla_like_step(params, grad, state, eta, mu, 0.0, 1.0)
}

/// Staleness-damped momentum: the gradient is scaled by `exp(-alpha * tau)`
/// (no cosine cutoff) and then takes a Nesterov step.
pub fn sdm_step(
    params: &mut [f64],
    grad: &[f64],
    tau: f64,
    alpha: f64,
    state: &mut NesterovVelocity,
    eta: f64,
    mu: f64,
) -> Result<StepOutcome, OptimError> {
    let scale = sdm_scale(tau, alpha);
    mla_like_step(params, &scaled(grad, scale), state, eta, mu, 0.0, scale)
}

pub fn sdm_scale(tau: f64, alpha: f64) -> f64 {
    (-alpha * tau).exp()
}

/// `(1 + tau)^(-1/2)`.
pub fn poly_decay_scale(tau: f64) -> f64 {
    1.0 / (1.0 + tau).sqrt()
}

pub fn poly_decay_step(
    params: &mut [f64],
    grad: &[f64],
    tau: f64,
    state: &mut NesterovVelocity,
    eta: f64,
    mu: f64,
) -> Result<StepOutcome, OptimError> {
    let scale = poly_decay_scale(tau);
    mla_like_step(params, &scaled(grad, scale), state, eta, mu, 0.0, scale)
}

/// Momentum look-ahead: a Nesterov step followed by a velocity extrapolation
/// of `tau * mu` steps, `theta -= eta * tau * mu * v`.
pub fn mla_step(
    params: &mut [f64],
    grad: &[f64],
    tau: f64,
    state: &mut NesterovVelocity,
    eta: f64,
    mu: f64,
) -> Result<StepOutcome, OptimError> {
    mla_like_step(params, grad, state, eta, mu, tau, 1.0)
}

fn mla_like_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut NesterovVelocity,
    eta: f64,
    mu: f64,
    lookahead: f64,
    sigma: f64,
) -> Result<StepOutcome, OptimError> {
    check_shapes(params.len(), grad.len(), state.v.len())?;
    let mut step_inf = 0.0f64;
    for i in 0..params.len() {
        let g = grad[i];
        state.v[i] = mu * state.v[i] + g;
        let mut increment = eta * (g + mu * state.v[i]);
        if lookahead != 0.0 {
            increment += eta * lookahead * mu * state.v[i];
        }
        params[i] -= increment;
        step_inf = step_inf.max(increment.abs());
    }
    Ok(StepOutcome {
        sigma,
        applied: true,
        rho: None,
        step_inf,
    })
}

/// Delayed Nesterov: every call takes a plain step `-eta * g` and buffers
/// `g`; every `period`-th call the buffered mean also updates the velocity
/// and a momentum burst `-eta * mu * v` is applied, then the buffer resets.
pub fn delayed_nesterov_step(
    params: &mut [f64],
    grad: &[f64],
    buffer: &mut DelayBuffer,
    velocity: &mut NesterovVelocity,
    eta: f64,
    mu: f64,
    period: u64,
) -> Result<StepOutcome, OptimError> {
    check_shapes(params.len(), grad.len(), velocity.v.len())?;
    check_shapes(params.len(), grad.len(), buffer.accumulated.len())?;
    if period == 0 {
        return Err(OptimError::InvalidConfig(
            "buffer_period must be at least 1".into(),
        ));
    }
    let mut increments = vec![0.0; params.len()];
    for i in 0..params.len() {
        increments[i] = eta * grad[i];
        buffer.accumulated[i] += grad[i];
    }
    buffer.count += 1;
    buffer.rounds_since_burst += 1;
    if buffer.rounds_since_burst >= period {
        let n = buffer.count as f64;
        for i in 0..params.len() {
            let mean = buffer.accumulated[i] / n;
            velocity.v[i] = mu * velocity.v[i] + mean;
            increments[i] += eta * mu * velocity.v[i];
            buffer.accumulated[i] = 0.0;
        }
        buffer.count = 0;
        buffer.rounds_since_burst = 0;
    }
    let mut step_inf = 0.0f64;
    for (p, inc) in params.iter_mut().zip(&increments) {
        *p -= inc;
        step_inf = step_inf.max(inc.abs());
    }
    Ok(StepOutcome {
        sigma: 1.0,
        applied: true,
        rho: None,
        step_inf,
    })
}

/// Eager mixing of a worker's pseudo-gradient with the previous averaged one:
/// `(own - prev_own) / workers + prev_avg`. Without history the worker's own
/// pseudo-gradient is returned unchanged.
pub fn eager_mix(
    own: &[f64],
    prev_own: Option<&[f64]>,
    prev_avg: Option<&[f64]>,
    workers: usize,
) -> Result<Vec<f64>, OptimError> {
    let (prev_own, prev_avg) = match (prev_own, prev_avg) {
        (Some(o), Some(a)) => (o, a),
        _ => return Ok(own.to_vec()),
    };
    check_shapes(own.len(), prev_own.len(), prev_avg.len())?;
    let m = workers.max(1) as f64;
    Ok(own
        .iter()
        .zip(prev_own)
        .zip(prev_avg)
        .map(|((o, po), pa)| (o - po) / m + pa)
        .collect())
}
