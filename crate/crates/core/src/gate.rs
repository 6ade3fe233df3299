//! Staleness gate: cosine cutoff times exponential information decay.
//!
//! For a pseudo-gradient that is `tau` outer rounds old the gate weight is
//!
//! ```text
//! gamma(tau) = [tau < tau_cut] * 0.5 * (1 + cos(pi * tau / tau_cut))
//! sigma(tau) = gamma(tau) * exp(-alpha * tau)
//! ```
//!
//! `tau` is a nonnegative real. The simulator only produces integer delays,
//! but fragment-age gating and the grid searches in [`crate::theory`] need
//! real-valued evaluation.

use std::f64::consts::PI;
use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GateError {
    #[error("staleness must be a finite nonnegative number, got {0}")]
    NegativeTau(f64),
    #[error("tau_cut must be positive or infinite, got {0}")]
    BadCutoff(f64),
    #[error("alpha must be finite and nonnegative, got {0}")]
    BadAlpha(f64),
}

/// Cutoff of the cosine gate. `Infinite` disables the cosine factor entirely,
/// so the gate is the bare exponential with no rounding from `cos`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauCut {
    Finite(f64),
    Infinite,
}

impl TauCut {
    pub fn is_finite(self) -> bool {
        matches!(self, TauCut::Finite(_))
    }

    pub fn as_f64(self) -> f64 {
        match self {
            TauCut::Finite(c) => c,
            TauCut::Infinite => f64::INFINITY,
        }
    }

    fn validate(self) -> Result<(), GateError> {
        match self {
            TauCut::Finite(c) if !(c > 0.0) || !c.is_finite() => Err(GateError::BadCutoff(c)),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for TauCut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TauCut::Finite(c) => write!(f, "{c}"),
            TauCut::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for TauCut {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinite" | "infinity" => Ok(TauCut::Infinite),
            other => other
                .parse::<f64>()
                .map(TauCut::Finite)
                .map_err(|e| format!("invalid tau_cut `{s}`: {e}")),
        }
    }
}

// JSON has no infinity, so the sentinel is the string "inf".
impl Serialize for TauCut {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            TauCut::Finite(c) => serializer.serialize_f64(*c),
            TauCut::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for TauCut {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct TauCutVisitor;

        impl Visitor<'_> for TauCutVisitor {
            type Value = TauCut;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive number or the string \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<TauCut, E> {
                Ok(TauCut::Finite(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<TauCut, E> {
                Ok(TauCut::Finite(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<TauCut, E> {
                Ok(TauCut::Finite(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<TauCut, E> {
                v.parse().map_err(E::custom)
            }
        }

        deserializer.deserialize_any(TauCutVisitor)
    }
}

/// The `(alpha, tau_cut)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StalenessGate {
    pub alpha: f64,
    pub tau_cut: TauCut,
}

impl StalenessGate {
    pub const DEFAULT_ALPHA: f64 = 0.2;
    pub const DEFAULT_TAU_CUT: f64 = 32.0;

    pub fn new(alpha: f64, tau_cut: TauCut) -> Result<Self, GateError> {
        let gate = Self { alpha, tau_cut };
        gate.validate()?;
        Ok(gate)
    }

    /// `alpha = 0`, no cutoff: every weight is exactly 1.
    pub fn identity() -> Self {
        Self {
            alpha: 0.0,
            tau_cut: TauCut::Infinite,
        }
    }

    /// Exponential-only gate (no cosine cutoff).
    pub fn exponential(alpha: f64) -> Self {
        Self {
            alpha,
            tau_cut: TauCut::Infinite,
        }
    }

    pub fn validate(&self) -> Result<(), GateError> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(GateError::BadAlpha(self.alpha));
        }
        self.tau_cut.validate()
    }

    pub fn evaluate(&self, tau: f64) -> Result<f64, GateError> {
        staleness_weight(tau, self)
    }
}

impl Default for StalenessGate {
    fn default() -> Self {
        Self {
            alpha: Self::DEFAULT_ALPHA,
            tau_cut: TauCut::Finite(Self::DEFAULT_TAU_CUT),
        }
    }
}

fn check_tau(tau: f64) -> Result<(), GateError> {
    if tau >= 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(GateError::NegativeTau(tau))
    }
}

/// `0.5 * (1 + cos(pi * tau / tau_cut))` on `[0, tau_cut)`, exactly zero from
/// `tau_cut` on, and exactly one for an infinite cutoff.
pub fn cosine_gate(tau: f64, tau_cut: TauCut) -> Result<f64, GateError> {
    check_tau(tau)?;
    tau_cut.validate()?;
    Ok(match tau_cut {
        TauCut::Infinite => 1.0,
        TauCut::Finite(cut) if tau >= cut => 0.0,
        TauCut::Finite(cut) => 0.5 * (1.0 + (PI * tau / cut).cos()),
    })
}

/// `sigma(tau) = gamma(tau) * exp(-alpha * tau)`.
///
/// Zero exactly when the cutoff is finite and `tau >= tau_cut`; the indicator
/// zeroes it, never underflow of the exponential.
pub fn staleness_weight(tau: f64, gate: &StalenessGate) -> Result<f64, GateError> {
    gate.validate()?;
    let gamma = cosine_gate(tau, gate.tau_cut)?;
    if gamma == 0.0 {
        return Ok(0.0);
    }
    Ok(gamma * (-gate.alpha * tau).exp())
}

/// Effective age used by per-fragment gating: `max(tau, fragment_age)`.
pub fn effective_age(tau: f64, fragment_age: f64) -> Result<f64, GateError> {
    check_tau(tau)?;
    check_tau(fragment_age)?;
    Ok(tau.max(fragment_age))
}
