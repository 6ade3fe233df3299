//! Versioned run configuration.
//!
//! Optimizer hyperparameters left out of a config file are filled from the
//! method's defaults, and the config hash is computed on that resolved form,
//! so two files that resolve to the same run share a hash regardless of key
//! order, whitespace, or which defaults were spelled out.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gate::{StalenessGate, TauCut};
use crate::objective::ObjectiveSpec;
use crate::optim::{GatePlacement, InnerConfig, Method, OuterConfig};
use crate::simulator::DelaySchedule;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldError>),
}

impl ConfigError {
    pub fn fields(&self) -> Vec<String> {
        match self {
            ConfigError::Invalid(v) => v.iter().map(|e| e.path.clone()).collect(),
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_cut: Option<TauCut>,
}

/// Outer optimizer as written in a config file: a method plus optional
/// overrides of its defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterSpec {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_placement: Option<GatePlacement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer_period: Option<u64>,
}

impl OuterSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            eta: None,
            beta1: None,
            beta2: None,
            epsilon: None,
            mu: None,
            gate: None,
            gate_placement: None,
            buffer_period: None,
        }
    }

    pub fn resolve(&self) -> OuterConfig {
        let d = OuterConfig::defaults(self.method);
        let gate = self.gate.unwrap_or(GateSpec {
            alpha: None,
            tau_cut: None,
        });
        OuterConfig {
            method: self.method,
            eta: self.eta.unwrap_or(d.eta),
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            mu: self.mu.unwrap_or(d.mu),
            gate: StalenessGate {
                alpha: gate.alpha.unwrap_or(d.gate.alpha),
                tau_cut: gate.tau_cut.unwrap_or(d.gate.tau_cut),
            },
            gate_placement: self.gate_placement.unwrap_or(d.gate_placement),
            buffer_period: self.buffer_period.unwrap_or(d.buffer_period),
        }
    }

    /// Every field populated from [`OuterSpec::resolve`].
    pub fn resolved(&self) -> Self {
        let c = self.resolve();
        Self::from(&c)
    }
}

impl From<&OuterConfig> for OuterSpec {
    fn from(c: &OuterConfig) -> Self {
        Self {
            method: c.method,
            eta: Some(c.eta),
            beta1: Some(c.beta1),
            beta2: Some(c.beta2),
            epsilon: Some(c.epsilon),
            mu: Some(c.mu),
            gate: Some(GateSpec {
                alpha: Some(c.gate.alpha),
                tau_cut: Some(c.gate.tau_cut),
            }),
            gate_placement: Some(c.gate_placement),
            buffer_period: Some(c.buffer_period),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FragmentSpec {
    pub count: usize,
    /// Fragments synced per round.
    pub budget: usize,
}

impl Default for FragmentSpec {
    fn default() -> Self {
        Self { count: 1, budget: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub objective: ObjectiveSpec,
    pub workers: usize,
    pub inner_steps: usize,
    pub rounds: u64,
    pub outer: OuterSpec,
    #[serde(default)]
    pub inner: InnerConfig,
    pub delay: DelaySchedule,
    #[serde(default)]
    pub fragments: FragmentSpec,
    #[serde(default)]
    pub quantize_queue: bool,
    pub seed: u64,
    pub eval_batch_size: usize,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg.resolved())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn resolved(&self) -> Self {
        Self {
            outer: self.outer.resolved(),
            ..self.clone()
        }
    }

    pub fn outer_config(&self) -> OuterConfig {
        self.outer.resolve()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues: Vec<(String, String)> = Vec::new();
        if self.version != CONFIG_VERSION {
            issues.push((
                "version".into(),
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.version),
            ));
        }
        issues.extend(self.objective.validate("objective"));
        if self.workers == 0 {
            issues.push(("workers".into(), "must be at least 1".into()));
        }
        if self.inner_steps == 0 {
            issues.push(("inner_steps".into(), "must be at least 1".into()));
        }
        if self.rounds == 0 {
            issues.push(("rounds".into(), "must be at least 1".into()));
        }
        if self.eval_batch_size == 0 {
            issues.push(("eval_batch_size".into(), "must be at least 1".into()));
        }
        issues.extend(self.outer_config().validate("outer"));
        issues.extend(self.inner.validate("inner"));
        issues.extend(self.delay.validate("delay"));
        let dim = self.objective.build().dim();
        if self.fragments.count == 0 || self.fragments.count > dim {
            issues.push((
                "fragments.count".into(),
                format!("must be in [1, {dim}] for this objective"),
            ));
        }
        if self.fragments.budget == 0 || self.fragments.budget > self.fragments.count {
            issues.push(("fragments.budget".into(), "must be in [1, fragments.count]".into()));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(
                issues
                    .into_iter()
                    .map(|(path, message)| FieldError { path, message })
                    .collect(),
            ))
        }
    }

    /// Canonical JSON of the resolved config without the seed: sorted keys,
    /// no whitespace.
    pub fn canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self.resolved()).expect("config serializes");
        if let serde_json::Value::Object(map) = &mut value {
            map.remove("seed");
        }
        // serde_json's default map is ordered by key
        serde_json::to_string(&value).expect("value serializes")
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::canonical_json`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        hex::encode(&digest[..8])
    }

    /// Result file name: `<hash>_s<seed>.json`.
    pub fn result_file_name(&self) -> String {
        format!("{}_s{}.json", self.hash(), self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "version": 1,
        "objective": {"kind": "quadratic", "dim": 8, "eig_min": 0.1, "eig_max": 1.0,
                      "seed": 3, "noise_std": 0.1, "batch_size": 4, "init_std": 1.0},
        "workers": 2, "inner_steps": 4, "rounds": 10,
        "outer": {"method": "adam"},
        "delay": {"kind": "fixed", "tau": 0},
        "seed": 1, "eval_batch_size": 16
    }"#;

    #[test]
    fn minimal_config_resolves_defaults() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        let o = c.outer_config();
        assert_eq!(o.eta, 1e-3);
        assert_eq!(c.outer.eta, Some(1e-3));
        assert_eq!(c.inner, InnerConfig::default());
        assert_eq!(c.fragments, FragmentSpec::default());
    }

    #[test]
    fn hash_ignores_order_whitespace_and_explicit_defaults() {
        let a = RunConfig::from_json(MINIMAL).unwrap();
        let reordered = r#"{"seed":1,"eval_batch_size":16,"delay":{"tau":0,"kind":"fixed"},
            "outer":{"eta":0.001,"method":"adam"},"rounds":10,"inner_steps":4,"workers":2,
            "objective":{"init_std":1.0,"batch_size":4,"noise_std":0.1,"seed":3,"eig_max":1.0,"eig_min":0.1,"dim":8,"kind":"quadratic"},
            "version":1}"#;
        let b = RunConfig::from_json(reordered).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed = 99;
        assert_eq!(a.hash(), c.hash());
        c.rounds = 11;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.result_file_name(), format!("{}_s1.json", a.hash()));
    }

    #[test]
    fn invalid_beta_names_the_field() {
        let text = MINIMAL.replace(r#"{"method": "adam"}"#, r#"{"method": "cgad", "beta1": 1.0}"#);
        let err = RunConfig::from_json(&text).unwrap_err();
        assert_eq!(err.fields(), vec!["outer.beta1"]);
        assert!(err.to_string().contains("outer.beta1"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace(r#""workers": 2"#, r#""workers": 2, "wrokers": 3"#);
        assert!(matches!(RunConfig::from_json(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn version_and_fragment_checks() {
        let text = MINIMAL
            .replace(r#""version": 1"#, r#""version": 2"#)
            .replace(r#""seed": 1,"#, r#""seed": 1, "fragments": {"count": 9, "budget": 1},"#);
        let err = RunConfig::from_json(&text).unwrap_err();
        assert_eq!(err.fields(), vec!["version", "fragments.count"]);
    }
}
