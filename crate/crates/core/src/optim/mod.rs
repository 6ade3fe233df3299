//! Outer optimizers behind one step interface, plus the inner AdamW.

mod adam;
mod momentum;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gate::{GateError, StalenessGate};

pub use adam::{cgad_step, inner_adamw_step, AdamHyper, AdamMoments, InnerConfig};
pub use momentum::{
    delayed_nesterov_step, eager_mix, mla_step, nesterov_step, poly_decay_scale, poly_decay_step,
    sdm_scale, sdm_step, DelayBuffer, NesterovVelocity,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("shape mismatch: params {params}, grad {grad}, state {state}")]
    ShapeMismatch {
        params: usize,
        grad: usize,
        state: usize,
    },
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
}

pub(crate) fn check_shapes(params: usize, grad: usize, state: usize) -> Result<(), OptimError> {
    if params == grad && grad == state {
        Ok(())
    } else {
        Err(OptimError::ShapeMismatch {
            params,
            grad,
            state,
        })
    }
}

/// What a single outer step did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Multiplicative weight the method applied to the incoming gradient.
    pub sigma: f64,
    pub applied: bool,
    /// Largest normalized Adam ratio; `None` for non-Adam methods.
    pub rho: Option<f64>,
    pub step_inf: f64,
}

impl StepOutcome {
    pub fn dropped() -> Self {
        Self {
            sigma: 0.0,
            applied: false,
            rho: None,
            step_inf: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cgad,
    PaCgad,
    Adam,
    AdamDecay,
    Nesterov,
    Sdm,
    DelayedNesterov,
    PolyDecay,
    Eager,
    Mla,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Cgad,
        Method::PaCgad,
        Method::Adam,
        Method::AdamDecay,
        Method::Nesterov,
        Method::Sdm,
        Method::DelayedNesterov,
        Method::PolyDecay,
        Method::Eager,
        Method::Mla,
    ];

    pub fn is_adam_family(self) -> bool {
        matches!(
            self,
            Method::Cgad | Method::PaCgad | Method::Adam | Method::AdamDecay
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Cgad => "cgad",
            Method::PaCgad => "pa_cgad",
            Method::Adam => "adam",
            Method::AdamDecay => "adam_decay",
            Method::Nesterov => "nesterov",
            Method::Sdm => "sdm",
            Method::DelayedNesterov => "delayed_nesterov",
            Method::PolyDecay => "poly_decay",
            Method::Eager => "eager",
            Method::Mla => "mla",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatePlacement {
    /// Gate the gradient before it enters the moment buffers.
    #[default]
    Before,
    /// Moments absorb the raw gradient; only the final step is gated.
    After,
}

impl fmt::Display for GatePlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GatePlacement::Before => "before",
            GatePlacement::After => "after",
        })
    }
}

/// Fully resolved outer optimizer configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterConfig {
    pub method: Method,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub mu: f64,
    pub gate: StalenessGate,
    pub gate_placement: GatePlacement,
    pub buffer_period: u64,
}

impl OuterConfig {
    /// Published defaults: Adam family `(eta, beta1, beta2, eps) = (1e-3, 0.9,
    /// 0.95, 1e-8)` with gate `(0.2, 32)`; Nesterov family `eta = 0.7, mu =
    /// 0.9`.
    pub fn defaults(method: Method) -> Self {
        let gate = match method {
            Method::Adam => StalenessGate::identity(),
            Method::AdamDecay | Method::Sdm => {
                StalenessGate::exponential(StalenessGate::DEFAULT_ALPHA)
            }
            _ => StalenessGate::default(),
        };
        let eta = if method.is_adam_family() { 1e-3 } else { 0.7 };
        Self {
            method,
            eta,
            beta1: 0.9,
            beta2: 0.95,
            epsilon: 1e-8,
            mu: 0.9,
            gate,
            gate_placement: GatePlacement::Before,
            buffer_period: 4,
        }
    }

    /// The gate the method actually applies. Plain Adam ignores the
    /// configured gate; Adam-Decay and SDM never use a cosine cutoff.
    pub fn effective_gate(&self) -> StalenessGate {
        match self.method {
            Method::Adam => StalenessGate::identity(),
            Method::AdamDecay | Method::Sdm => StalenessGate::exponential(self.gate.alpha),
            _ => self.gate,
        }
    }

    pub fn adam_hyper(&self) -> AdamHyper {
        AdamHyper {
            eta: self.eta,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    /// Field-level problems as `(path, message)` pairs, empty when valid.
    pub fn validate(&self, prefix: &str) -> Vec<(String, String)> {
        let mut issues = Vec::new();
        let mut bad = |field: &str, msg: String| issues.push((format!("{prefix}.{field}"), msg));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            bad("eta", format!("must be positive and finite, got {}", self.eta));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            bad("beta1", format!("must be in [0, 1), got {}", self.beta1));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            bad("beta2", format!("must be in [0, 1), got {}", self.beta2));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            bad("epsilon", format!("must be positive and finite, got {}", self.epsilon));
        }
        if !(0.0..1.0).contains(&self.mu) {
            bad("mu", format!("must be in [0, 1), got {}", self.mu));
        }
        if let Err(e) = self.gate.validate() {
            let field = match e {
                GateError::BadAlpha(_) => "gate.alpha",
                _ => "gate.tau_cut",
            };
            bad(field, e.to_string());
        }
        if self.buffer_period < 1 {
            bad("buffer_period", "must be at least 1".into());
        }
        issues
    }
}

#[derive(Debug, Clone, PartialEq)]
enum OuterState {
    Adam(AdamMoments),
    Nesterov(NesterovVelocity),
    Delayed {
        velocity: NesterovVelocity,
        buffer: DelayBuffer,
    },
}

/// An outer optimizer bound to one parameter slice.
///
/// Eager mixing is protocol state and happens in the simulator; here Eager
/// takes plain Nesterov steps on the already-mixed gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterOptimizer {
    cfg: OuterConfig,
    gate: StalenessGate,
    state: OuterState,
}

impl OuterOptimizer {
    pub fn new(cfg: &OuterConfig, dim: usize) -> Self {
        let state = match cfg.method {
            m if m.is_adam_family() => OuterState::Adam(AdamMoments::zeros(dim)),
            Method::DelayedNesterov => OuterState::Delayed {
                velocity: NesterovVelocity::zeros(dim),
                buffer: DelayBuffer::zeros(dim),
            },
            _ => OuterState::Nesterov(NesterovVelocity::zeros(dim)),
        };
        Self {
            cfg: cfg.clone(),
            gate: cfg.effective_gate(),
            state,
        }
    }

    pub fn config(&self) -> &OuterConfig {
        &self.cfg
    }

    pub fn adam_moments(&self) -> Option<&AdamMoments> {
        match &self.state {
            OuterState::Adam(m) => Some(m),
            _ => None,
        }
    }

    /// Apply one pseudo-gradient of age `tau`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], tau: f64) -> Result<StepOutcome, OptimError> {
        let c = &self.cfg;
        match (&mut self.state, c.method) {
            (OuterState::Adam(moments), _) => cgad_step(
                params,
                grad,
                tau,
                moments,
                &c.adam_hyper(),
                &self.gate,
                c.gate_placement,
            ),
            (OuterState::Delayed { velocity, buffer }, _) => {
                delayed_nesterov_step(params, grad, buffer, velocity, c.eta, c.mu, c.buffer_period)
            }
            (OuterState::Nesterov(v), Method::Sdm) => {
                sdm_step(params, grad, tau, self.gate.alpha, v, c.eta, c.mu)
            }
            (OuterState::Nesterov(v), Method::PolyDecay) => poly_decay_step(params, grad, tau, v, c.eta, c.mu),
            (OuterState::Nesterov(v), Method::Mla) => mla_step(params, grad, tau, v, c.eta, c.mu),
            (OuterState::Nesterov(v), _) => nesterov_step(params, grad, v, c.eta, c.mu),
        }
    }
}
