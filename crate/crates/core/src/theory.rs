//! Numerical checks of the gate's convergence-bound structure.
//!
//! * [`max_tau_sigma`]: grid search of `tau * sigma(tau)`, which is bounded
//!   by `1 / (e * alpha)` whenever `tau_cut >= 1 / alpha`.
//! * [`bound_terms`]: the three `1/sqrt(T)` terms of the idealized
//!   gated-adaptive rate (optimization gap, noise, staleness bias).
//! * [`audit_run`]: per-step audit of a simulator trace. The step-magnitude
//!   inequality `|dtheta|_inf <= eta * sigma_t * rho_t` is an algebraic
//!   identity of the update, so any violation is an implementation bug.
//!   Whether the idealized `rho_t <= 1` actually held is measured, not assumed.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gate::{staleness_weight, GateError, StalenessGate, TauCut};
use crate::simulator::UpdateRecord;

/// Relative slack of the step-magnitude check.
pub const STEP_BOUND_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error("grid step must be in (0, 1e-3], got {0}")]
    GridStep(f64),
    #[error("tau * sigma(tau) is unbounded without decay or cutoff")]
    Unbounded,
    #[error("invalid theory input `{0}`: must be positive and finite")]
    BadInput(&'static str),
    #[error("trace record {index} is missing `{field}`")]
    MissingField { index: usize, field: &'static str },
}

/// Grid maximum of `tau * sigma(tau)` over `[0, max(2 tau_cut, 4 / alpha)]`.
/// Returns `(argmax, max)`.
pub fn max_tau_sigma(gate: &StalenessGate, step: f64) -> Result<(f64, f64), TheoryError> {
    gate.validate()?;
    if !(step > 0.0 && step <= 1e-3) {
        return Err(TheoryError::GridStep(step));
    }
    let decay_span = if gate.alpha > 0.0 { 4.0 / gate.alpha } else { 0.0 };
    let upper = match gate.tau_cut {
        TauCut::Finite(c) => (2.0 * c).max(decay_span),
        TauCut::Infinite if gate.alpha > 0.0 => decay_span,
        TauCut::Infinite => return Err(TheoryError::Unbounded),
    };
    let n = (upper / step).floor() as u64;
    let mut best = (0.0, 0.0);
    for i in 0..=n {
        let tau = i as f64 * step;
        let v = tau * staleness_weight(tau, gate)?;
        if v > best.1 {
            best = (tau, v);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    /// Smoothness constant `L`.
    pub smoothness: f64,
    /// Gradient-norm bound `G`.
    pub grad_bound: f64,
    /// Pseudo-gradient second-moment bound.
    pub sigma2: f64,
    /// Step-size constant, `eta = c / sqrt(T)`.
    pub c: f64,
    pub horizon: u64,
    /// `F(theta_0) - F*`.
    pub f_gap: f64,
}

impl TheoryInputs {
    fn validate(&self) -> Result<(), TheoryError> {
        let checks = [
            (self.smoothness, "smoothness"),
            (self.grad_bound, "grad_bound"),
            (self.sigma2, "sigma2"),
            (self.c, "c"),
            (self.f_gap, "f_gap"),
        ];
        for (v, name) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TheoryError::BadInput(name));
            }
        }
        if self.horizon == 0 {
            return Err(TheoryError::BadInput("horizon"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub optimization: f64,
    pub noise: f64,
    pub staleness: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.optimization + self.noise + self.staleness
    }
}

/// `(F_gap / (c sqrt T), L c sigma2 / (2 sqrt T), L c G / (e alpha sqrt T))`.
pub fn bound_terms(inputs: &TheoryInputs, alpha: f64) -> Result<BoundTerms, TheoryError> {
    inputs.validate()?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(TheoryError::BadInput("alpha"));
    }
    let sqrt_t = (inputs.horizon as f64).sqrt();
    let l_c = inputs.smoothness * inputs.c;
    Ok(BoundTerms {
        optimization: inputs.f_gap / (inputs.c * sqrt_t),
        noise: l_c * inputs.sigma2 / (2.0 * sqrt_t),
        staleness: l_c * inputs.grad_bound / (E * alpha * sqrt_t),
    })
}

/// What the audit needs beyond the trace itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditContext {
    pub gate: StalenessGate,
    pub eta: f64,
    /// Audit the step-magnitude inequality; every applied record must carry
    /// `rho`.
    pub check_step_bound: bool,
    /// Exact smoothness and optimality gap; when present the rate bound is
    /// evaluated and every record must carry `grad_norm_sq`.
    pub exact: Option<ExactProblem>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactProblem {
    pub smoothness: f64,
    pub f_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub inputs: TheoryInputs,
    pub terms: BoundTerms,
    /// `(1/T) sum_t sigma_t |grad F(theta_t)|^2`
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub updates: u64,
    pub applied: u64,
    pub step_bound_checked: u64,
    pub step_bound_violations: u64,
    /// Largest `step_inf / (eta sigma rho)` seen.
    pub step_bound_max_ratio: Option<f64>,
    /// Fraction of applied steps with `rho_t <= 1`.
    pub rho_le_one_fraction: Option<f64>,
    pub rho_max: Option<f64>,
    pub rho_mean: Option<f64>,
    pub sigma_bar: f64,
    pub weighted_grad_norm_avg: Option<f64>,
    pub bound: Option<BoundCheck>,
}

/// Running mean that is exact for constant sequences.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct RunningMean {
    mean: f64,
    n: u64,
}

impl RunningMean {
    pub(crate) fn push(&mut self, x: f64) {
        self.n += 1;
        self.mean += (x - self.mean) / self.n as f64;
    }

    pub(crate) fn get(&self) -> Option<f64> {
        (self.n > 0).then_some(self.mean)
    }
}

pub fn audit_run(trace: &[UpdateRecord], ctx: &AuditContext) -> Result<AuditReport, TheoryError> {
    let mut sigma_bar = RunningMean::default();
    let mut rho_mean = RunningMean::default();
    let mut weighted = RunningMean::default();
    let mut sq_norm = RunningMean::default();
    let mut rho_le_one = 0u64;
    let mut rho_max: Option<f64> = None;
    let mut applied = 0u64;
    let mut checked = 0u64;
    let mut violations = 0u64;
    let mut worst_ratio: Option<f64> = None;
    let mut grad_bound = 0.0f64;

    for (index, rec) in trace.iter().enumerate() {
        sigma_bar.push(rec.sigma);
        sq_norm.push(rec.pseudo_grad_norm_sq);
        if ctx.exact.is_some() {
            let g2 = rec.grad_norm_sq.ok_or(TheoryError::MissingField {
                index,
                field: "grad_norm_sq",
            })?;
            weighted.push(rec.sigma * g2);
            grad_bound = grad_bound.max(g2.sqrt());
        }
        if !rec.applied {
            continue;
        }
        applied += 1;
        if !ctx.check_step_bound {
            continue;
        }
        let rho = rec.rho.ok_or(TheoryError::MissingField { index, field: "rho" })?;
        rho_mean.push(rho);
        rho_max = Some(rho_max.map_or(rho, |m| m.max(rho)));
        if rho <= 1.0 {
            rho_le_one += 1;
        }
        let bound = ctx.eta * rec.sigma * rho;
        checked += 1;
        if bound > 0.0 {
            let ratio = rec.step_inf / bound;
            worst_ratio = Some(worst_ratio.map_or(ratio, |w| w.max(ratio)));
        }
        if !(rec.step_inf <= bound * (1.0 + STEP_BOUND_REL_TOL)) {
            violations += 1;
        }
    }

    let updates = trace.len() as u64;
    let weighted_avg = weighted.get();
    let bound = match (ctx.exact, weighted_avg) {
        (Some(exact), Some(lhs)) if ctx.gate.alpha > 0.0 && updates > 0 => {
            let inputs = TheoryInputs {
                smoothness: exact.smoothness,
                grad_bound,
                sigma2: sq_norm.get().unwrap_or(0.0),
                c: ctx.eta * (updates as f64).sqrt(),
                horizon: updates,
                f_gap: exact.f_gap,
            };
            bound_terms(&inputs, ctx.gate.alpha).ok().map(|terms| BoundCheck {
                inputs,
                terms,
                lhs,
                rhs: terms.total(),
                holds: lhs <= terms.total(),
            })
        }
        _ => None,
    };

    Ok(AuditReport {
        updates,
        applied,
        step_bound_checked: checked,
        step_bound_violations: violations,
        step_bound_max_ratio: worst_ratio,
        rho_le_one_fraction: (checked > 0).then(|| rho_le_one as f64 / checked as f64),
        rho_max,
        rho_mean: rho_mean.get(),
        sigma_bar: sigma_bar.get().unwrap_or(0.0),
        weighted_grad_norm_avg: weighted_avg,
        bound,
    })
}
