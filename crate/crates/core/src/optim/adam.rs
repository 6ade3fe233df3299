use serde::{Deserialize, Serialize};

use super::{check_shapes, GatePlacement, OptimError, StepOutcome};
use crate::gate::{staleness_weight, StalenessGate};

/// Adam moment buffers. Bias-corrected moments are derived on the fly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of applied updates. Dropped updates do not count.
    pub t: u64,
}

impl AdamMoments {
    pub fn zeros(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Inner worker optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.95,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl InnerConfig {
    pub fn validate(&self, prefix: &str) -> Vec<(String, String)> {
        let mut issues = Vec::new();
        let mut bad = |field: &str, msg: &str| issues.push((format!("{prefix}.{field}"), msg.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bad("lr", "must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            bad("beta1", "must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            bad("beta2", "must be in [0, 1)");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            bad("epsilon", "must be positive and finite");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            bad("weight_decay", "must be nonnegative and finite");
        }
        issues
    }
}

/// One decoupled-weight-decay Adam step with 1-indexed bias correction.
pub fn inner_adamw_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut AdamMoments,
    cfg: &InnerConfig,
) -> Result<(), OptimError> {
    check_shapes(params.len(), grad.len(), state.len())?;
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        if cfg.weight_decay != 0.0 {
            params[i] -= cfg.lr * cfg.weight_decay * params[i];
        }
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.epsilon));
    }
    Ok(())
}

/// One gated Adam outer step (CGAD, PA-CGAD, Adam and Adam-Decay all run
/// through here; they differ only in the gate and the age fed in).
///
/// With `sigma = 0` nothing is touched, including the step counter. With
/// [`GatePlacement::Before`] the gated gradient `sigma * g` feeds both
/// moments; with [`GatePlacement::After`] the moments see the raw gradient.
/// Either way the final step is scaled by `sigma`.
///
/// The returned `rho` is `max_i |m_hat_i| / (sqrt(v_hat_i) + eps)` and
/// `step_inf` the infinity norm of the increment subtracted from `params`,
/// so `step_inf <= eta * sigma * rho` holds up to one rounding.
pub fn cgad_step(
    params: &mut [f64],
    grad: &[f64],
    tau: f64,
    state: &mut AdamMoments,
    hyper: &AdamHyper,
    gate: &StalenessGate,
    placement: GatePlacement,
) -> Result<StepOutcome, OptimError> {
    check_shapes(params.len(), grad.len(), state.len())?;
    let sigma = staleness_weight(tau, gate)?;
    if sigma == 0.0 {
        return Ok(StepOutcome::dropped());
    }
    let moment_scale = match placement {
        GatePlacement::Before => sigma,
        GatePlacement::After => 1.0,
    };
    state.t += 1;
    let bc1 = 1.0 - hyper.beta1.powi(state.t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(state.t as i32);
    let lr = hyper.eta * sigma;
    let mut rho = 0.0f64;
    let mut step_inf = 0.0f64;
    for i in 0..params.len() {
        let g = moment_scale * grad[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        let ratio = m_hat / (v_hat.sqrt() + hyper.epsilon);
        let increment = lr * ratio;
        params[i] -= increment;
        rho = rho.max(ratio.abs());
        step_inf = step_inf.max(increment.abs());
    }
    Ok(StepOutcome {
        sigma,
        applied: true,
        rho: Some(rho),
        step_inf,
    })
}
