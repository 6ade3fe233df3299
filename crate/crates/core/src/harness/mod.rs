//! Run and sweep orchestration, result files, summaries, the gate table and
//! the self-check suite behind the command line.

pub mod presets;
mod sweep;
pub mod verify;

use std::f64::consts::E;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::gate::{cosine_gate, GateError, StalenessGate};
use crate::optim::{OuterConfig, OptimError};
use crate::simulator::{run_experiment, RunResult, SimError};

pub use sweep::{read_result, run_sweep, write_result, Cell, CellStatus, SweepReport, SweepSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid sweep:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    InvalidSweep(Vec<String>),
    #[error("unreadable result {}: {message}", path.display())]
    BadResult { path: PathBuf, message: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

impl From<OptimError> for HarnessError {
    fn from(e: OptimError) -> Self {
        HarnessError::Sim(SimError::Optim(e))
    }
}

/// Loads, optionally reseeds, runs, and writes one result file.
pub fn cli_run(config: &Path, out: &Path, seed_override: Option<u64>) -> Result<(PathBuf, RunResult), HarnessError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    let result = run_experiment(&cfg)?;
    std::fs::create_dir_all(out).map_err(|source| HarnessError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let path = write_result(out, &result)?;
    Ok((path, result))
}

/// Outer hyperparameters that differ from the method's defaults, as
/// `key=value` pairs; empty for a default configuration.
pub fn variant_label(cfg: &OuterConfig) -> String {
    let d = OuterConfig::defaults(cfg.method);
    let mut parts = Vec::new();
    if cfg.eta != d.eta {
        parts.push(format!("eta={}", cfg.eta));
    }
    if cfg.beta1 != d.beta1 {
        parts.push(format!("beta1={}", cfg.beta1));
    }
    if cfg.beta2 != d.beta2 {
        parts.push(format!("beta2={}", cfg.beta2));
    }
    if cfg.epsilon != d.epsilon {
        parts.push(format!("epsilon={}", cfg.epsilon));
    }
    if cfg.mu != d.mu {
        parts.push(format!("mu={}", cfg.mu));
    }
    if cfg.gate.alpha != d.gate.alpha {
        parts.push(format!("alpha={}", cfg.gate.alpha));
    }
    if cfg.gate.tau_cut != d.gate.tau_cut {
        parts.push(format!("tau_cut={}", cfg.gate.tau_cut));
    }
    if cfg.gate_placement != d.gate_placement {
        parts.push(format!("placement={}", cfg.gate_placement));
    }
    if cfg.buffer_period != d.buffer_period {
        parts.push(format!("buffer_period={}", cfg.buffer_period));
    }
    parts.join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub variant: String,
    pub schedule: String,
    pub expected: usize,
    pub n: usize,
    pub diverged: usize,
    pub mean_final_loss: Option<f64>,
    /// Sample standard deviation (n - 1 denominator); needs two results.
    pub std_final_loss: Option<f64>,
}

impl SummaryRow {
    pub fn missing(&self) -> usize {
        self.expected - self.n
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

/// Sample mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

fn row_key(method: &str, variant: &str, schedule: &str) -> (String, String, String) {
    (method.to_string(), variant.to_string(), schedule.to_string())
}

/// Groups results by (method, variant, schedule) in order of first
/// appearance. Everything used is read from the results themselves;
/// `expected` supplies the per-group cell count, defaulting to the number
/// of results found.
pub fn summarize_results(results: &[RunResult], expected: &[((String, String, String), usize)]) -> Summary {
    let mut keys: Vec<(String, String, String)> = expected.iter().map(|(k, _)| k.clone()).collect();
    for r in results {
        let k = row_key(r.method.name(), &variant_label(&r.config.outer_config()), &r.schedule);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let rows = keys
        .into_iter()
        .map(|key| {
            let members: Vec<&RunResult> = results
                .iter()
                .filter(|r| row_key(r.method.name(), &variant_label(&r.config.outer_config()), &r.schedule) == key)
                .collect();
            let losses: Vec<f64> = members.iter().map(|r| r.final_loss).collect();
            let (mean, std) = mean_std(&losses);
            let expected = expected
                .iter()
                .find(|(k, _)| *k == key)
                .map_or(members.len(), |(_, n)| *n);
            SummaryRow {
                method: key.0,
                variant: key.1,
                schedule: key.2,
                expected: expected.max(members.len()),
                n: members.len(),
                diverged: members.iter().filter(|r| r.diverged).count(),
                mean_final_loss: mean,
                std_final_loss: std,
            }
        })
        .collect();
    Summary { rows }
}

/// Summary of a sweep directory; cells without a readable result count as
/// missing.
pub fn summarize(cells: &[Cell], dir: &Path) -> Result<Summary, HarnessError> {
    let mut expected: Vec<((String, String, String), usize)> = Vec::new();
    let mut results = Vec::new();
    for cell in cells {
        let key = row_key(cell.config.outer.method.name(), &cell.variant(), &cell.config.delay.to_string());
        match expected.iter_mut().find(|(k, _)| *k == key) {
            Some((_, n)) => *n += 1,
            None => expected.push((key, 1)),
        }
        let path = dir.join(cell.file_name());
        if path.exists() {
            if let Ok(r) = read_result(&path) {
                results.push(r);
            }
        }
    }
    Ok(summarize_results(&results, &expected))
}

/// Quotes a CSV field when it contains a comma, quote or newline.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v}"))
}

impl Summary {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,variant,schedule,expected,n,missing,diverged,mean_final_loss,std_final_loss\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                csv_field(&r.method),
                csv_field(&r.variant),
                csv_field(&r.schedule),
                r.expected,
                r.n,
                r.missing(),
                r.diverged,
                fmt_opt(r.mean_final_loss),
                fmt_opt(r.std_final_loss)
            );
        }
        s
    }

    /// Aligned text table, one row per (method, variant, schedule).
    pub fn to_table(&self) -> String {
        let header = ["method", "variant", "schedule", "final loss (mean ± std)", "n", "notes"];
        let body: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                let loss = match (r.mean_final_loss, r.std_final_loss) {
                    (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
                    (Some(m), None) => format!("{m:.4}"),
                    _ => "-".to_string(),
                };
                let mut notes = Vec::new();
                if r.diverged > 0 {
                    notes.push(format!("diverged {}/{}", r.diverged, r.n));
                }
                if r.missing() > 0 {
                    notes.push(format!("missing {}", r.missing()));
                }
                [
                    r.method.clone(),
                    if r.variant.is_empty() { "-".into() } else { r.variant.clone() },
                    r.schedule.clone(),
                    loss,
                    format!("{}/{}", r.n, r.expected),
                    notes.join(", "),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: Vec<&str>| {
            let mut out = String::new();
            for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                if i > 0 {
                    out.push_str("  ");
                }
                out.push_str(c);
                out.extend(std::iter::repeat_n(' ', w - c.chars().count()));
            }
            out.trim_end().to_string() + "\n"
        };
        let mut s = line(header.to_vec());
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        s.push_str(&line(rule.iter().map(String::as_str).collect()));
        for row in &body {
            s.push_str(&line(row.iter().map(String::as_str).collect()));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateRow {
    pub tau: u64,
    pub gamma: f64,
    pub decay: f64,
    pub sigma: f64,
    pub tau_sigma: f64,
    pub running_max: f64,
}

/// One row per integer `tau` in `0..=tau_max`.
pub fn gate_table(gate: &StalenessGate, tau_max: u64) -> Result<Vec<GateRow>, HarnessError> {
    gate.validate()?;
    let mut running = 0.0f64;
    (0..=tau_max)
        .map(|t| {
            let tau = t as f64;
            let gamma = cosine_gate(tau, gate.tau_cut)?;
            let decay = (-gate.alpha * tau).exp();
            let sigma = gate.evaluate(tau)?;
            let tau_sigma = tau * sigma;
            running = running.max(tau_sigma);
            Ok(GateRow {
                tau: t,
                gamma,
                decay,
                sigma,
                tau_sigma,
                running_max: running,
            })
        })
        .collect()
}

/// `1/(e alpha)`, the unconstrained maximum of `tau e^{-alpha tau}`.
pub fn tau_sigma_reference(alpha: f64) -> f64 {
    1.0 / (E * alpha)
}

pub fn gate_table_csv(rows: &[GateRow], alpha: f64) -> String {
    let reference = tau_sigma_reference(alpha);
    let mut s = String::from("tau,gamma,decay,sigma,tau_sigma,running_max,reference\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.tau, r.gamma, r.decay, r.sigma, r.tau_sigma, r.running_max, reference
        );
    }
    s
}

pub fn gate_table_text(rows: &[GateRow], gate: &StalenessGate) -> String {
    let mut s = format!(
        "alpha = {}, tau_cut = {}, reference 1/(e alpha) = {:.6}\n",
        gate.alpha,
        gate.tau_cut,
        tau_sigma_reference(gate.alpha)
    );
    let _ = writeln!(
        s,
        "{:>5}  {:>10}  {:>10}  {:>10}  {:>10}  {:>10}",
        "tau", "gamma", "exp(-a t)", "sigma", "tau*sigma", "max"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>5}  {:>10.6}  {:>10.6}  {:>10.6}  {:>10.6}  {:>10.6}",
            r.tau, r.gamma, r.decay, r.sigma, r.tau_sigma, r.running_max
        );
    }
    s
}
