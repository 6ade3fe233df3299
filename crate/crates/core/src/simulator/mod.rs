//! Controlled-delay simulation of the local-steps/outer-step training loop.
//!
//! Each round every worker starts from the current global parameters, takes
//! `H` inner AdamW steps on its own shard and enqueues the resulting
//! pseudo-gradient with a sampled integer delay. The syncer then drains the
//! entries that are due this round, in `(available_round, worker,
//! produced_round)` order, and applies each one through the outer optimizer
//! on the fragments scheduled for this round.

mod delay;
mod fragments;
mod quant;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::objective::{Objective, ObjectiveError, Shard};
use crate::optim::{eager_mix, inner_adamw_step, AdamMoments, InnerConfig, Method, OptimError, OuterOptimizer};
use crate::seed::{derive_seed, stream_rng};
use crate::theory::{audit_run, AuditContext, AuditReport, ExactProblem, RunningMean, TheoryError};

pub use delay::{sample_delay, DelaySchedule};
pub use fragments::FragmentPartition;
pub use quant::{dequantize_payload, quantize_payload, QuantizedPayload};

/// Number of trailing eval losses averaged into the final loss.
pub const FINAL_LOSS_WINDOW: usize = 5;
/// Final loss above this multiple of the untrained reference loss marks a run
/// as diverged.
pub const DIVERGENCE_FACTOR: f64 = 5.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("worker order must be a permutation of 0..{0}")]
    WorkerOrder(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Raw(Vec<f64>),
    Quantized(QuantizedPayload),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry {
    pub worker: usize,
    pub produced_round: u64,
    pub tau: u64,
    pub available_round: u64,
    pub payload: Payload,
}

impl QueueEntry {
    pub fn decode(&self, fragments: &FragmentPartition) -> Vec<f64> {
        match &self.payload {
            Payload::Raw(v) => v.clone(),
            Payload::Quantized(q) => dequantize_payload(q, &fragments.boundaries),
        }
    }
}

/// Pending pseudo-gradients keyed by `(available_round, worker,
/// produced_round)`, so drain order never depends on insertion order.
#[derive(Debug, Default, Clone)]
pub struct DelayQueue {
    entries: BTreeMap<(u64, usize, u64), QueueEntry>,
}

impl DelayQueue {
    pub fn push(&mut self, entry: QueueEntry) {
        let key = (entry.available_round, entry.worker, entry.produced_round);
        let previous = self.entries.insert(key, entry);
        debug_assert!(previous.is_none(), "duplicate queue key");
    }

    /// Remove and return every entry due at `round`, in key order.
    pub fn drain_due(&mut self, round: u64) -> Vec<QueueEntry> {
        let later = self.entries.split_off(&(round + 1, 0, 0));
        let due = std::mem::replace(&mut self.entries, later);
        due.into_values().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct WorkerState {
    pub params: Vec<f64>,
    pub inner: AdamMoments,
    pub shard: Shard,
}

impl WorkerState {
    pub fn new(global: &[f64], shard: Shard) -> Self {
        Self {
            params: global.to_vec(),
            inner: AdamMoments::zeros(global.len()),
            shard,
        }
    }

    /// Restart from `global` with fresh inner optimizer state.
    pub fn reset(&mut self, global: &[f64]) {
        self.params.clear();
        self.params.extend_from_slice(global);
        self.inner.reset();
    }
}

/// `H` inner AdamW steps from `global`; returns `global - worker params`, or
/// `None` if the worker's parameters or losses stopped being finite.
pub fn run_inner_phase(
    worker: &mut WorkerState,
    global: &[f64],
    objective: &Objective,
    inner: &InnerConfig,
    steps: usize,
    round: u64,
) -> Result<Option<Vec<f64>>, SimError> {
    worker.reset(global);
    for h in 0..steps {
        let batch = objective.sample_batch(&worker.shard, round, h as u64);
        let (loss, grad) = objective.loss_and_grad(&worker.params, &batch)?;
        if !loss.is_finite() {
            return Ok(None);
        }
        inner_adamw_step(&mut worker.params, &grad, &mut worker.inner, inner)?;
    }
    if worker.params.iter().any(|p| !p.is_finite()) {
        return Ok(None);
    }
    Ok(Some(global.iter().zip(&worker.params).map(|(g, w)| g - w).collect()))
}

/// Oldest-first fragment choice for one round.
pub fn select_fragments(partition: &FragmentPartition, budget: usize) -> Vec<usize> {
    partition.select(budget)
}

/// One outer step on one fragment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub round: u64,
    pub worker: usize,
    pub produced_round: u64,
    pub tau: u64,
    pub fragment: usize,
    /// Fragment age at selection, before it was reset.
    pub age: f64,
    pub sigma: f64,
    pub applied: bool,
    pub rho: Option<f64>,
    pub step_inf: f64,
    /// `|grad F|^2` at the parameters the step started from, when the
    /// objective has a closed-form gradient.
    pub grad_norm_sq: Option<f64>,
    pub pseudo_grad_norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u64,
    pub eval_loss: f64,
    /// Queue entries consumed this round.
    pub consumed: usize,
    /// Optimizer steps that changed parameters.
    pub applied: usize,
    pub mean_sigma: Option<f64>,
    pub max_step_inf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceReason {
    NonFinite,
    LossAboveReference,
}

/// Everything a run persists. Wall time is kept in memory only so that a
/// result file is a pure function of its config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_hash: String,
    pub seed: u64,
    pub method: Method,
    pub schedule: String,
    pub config: RunConfig,
    pub initial_loss: f64,
    pub reference_loss: f64,
    /// Eval loss after each completed round.
    pub losses: Vec<f64>,
    pub rounds_completed: u64,
    pub final_loss: f64,
    pub diverged: bool,
    pub divergence_reason: Option<DivergenceReason>,
    pub consumed_entries: u64,
    pub applied_steps: u64,
    pub in_flight_dropped: u64,
    pub sigma_bar: f64,
    pub rho_max: Option<f64>,
    pub mean_selected_age: f64,
    pub theory: AuditReport,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl RunResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: RunResult,
    pub rounds: Vec<RoundMetrics>,
    pub trace: Vec<UpdateRecord>,
    pub final_params: Vec<f64>,
}

pub fn run_experiment(cfg: &RunConfig) -> Result<RunResult, SimError> {
    Ok(simulate(cfg, None)?.result)
}

pub fn simulate(cfg: &RunConfig, worker_order: Option<&[usize]>) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let order: Vec<usize> = match worker_order {
        None => (0..cfg.workers).collect(),
        Some(o) => {
            let mut sorted = o.to_vec();
            sorted.sort_unstable();
            if sorted != (0..cfg.workers).collect::<Vec<_>>() {
                return Err(SimError::WorkerOrder(cfg.workers));
            }
            o.to_vec()
        }
    };
    let started = Instant::now();
    let objective = cfg.objective.build();
    let outer = cfg.outer_config();
    let dim = objective.dim();
    let seed = cfg.seed;

    let mut global = objective.init_params(&mut stream_rng(seed, "init", &[]));
    let eval = objective.eval_batch(derive_seed(seed, "eval", &[]), cfg.eval_batch_size);
    let initial_loss = objective.loss(&global, &eval)?;
    let reference_loss = objective.init_reference_loss(cfg.eval_batch_size);

    let mut partition = FragmentPartition::even(dim, cfg.fragments.count);
    let mut optimizers: Vec<OuterOptimizer> = partition
        .boundaries
        .iter()
        .map(|r| OuterOptimizer::new(&outer, r.len()))
        .collect();
    let mut workers: Vec<WorkerState> = (0..cfg.workers)
        .map(|w| WorkerState::new(&global, Shard::new(seed, w, objective.batch_size())))
        .collect();
    let mut queue = DelayQueue::default();

    let eager = outer.method == Method::Eager;
    let mut prev_own: Vec<Option<Vec<f64>>> = vec![None; cfg.workers];
    let mut prev_avg: Option<Vec<f64>> = None;
    let track_grad = objective.smoothness().is_some();

    let mut losses = Vec::with_capacity(cfg.rounds as usize);
    let mut rounds = Vec::with_capacity(cfg.rounds as usize);
    let mut trace = Vec::new();
    let mut consumed_total = 0u64;
    let mut applied_total = 0u64;
    let mut selected_age = RunningMean::default();
    let mut non_finite = false;

    'rounds: for round in 0..cfg.rounds {
        for &w in &order {
            let delta = run_inner_phase(&mut workers[w], &global, &objective, &cfg.inner, cfg.inner_steps, round)?;
            let Some(delta) = delta else {
                non_finite = true;
                break 'rounds;
            };
            let tau = sample_delay(&cfg.delay, seed, w, round);
            let payload = if cfg.quantize_queue {
                Payload::Quantized(quantize_payload(&delta, &partition.boundaries))
            } else {
                Payload::Raw(delta)
            };
            queue.push(QueueEntry {
                worker: w,
                produced_round: round,
                tau,
                available_round: round + tau,
                payload,
            });
        }

        let due = queue.drain_due(round);
        let selected = select_fragments(&partition, cfg.fragments.budget);
        for &f in &selected {
            selected_age.push(partition.ages[f] as f64);
        }
        let mut round_sigma = RunningMean::default();
        let mut round_applied = 0usize;
        let mut round_step = 0.0f64;
        let mut applied_this_round: Vec<Vec<f64>> = Vec::new();

        for entry in &due {
            let own = entry.decode(&partition);
            let grad = if eager {
                let mixed = eager_mix(&own, prev_own[entry.worker].as_deref(), prev_avg.as_deref(), cfg.workers)?;
                prev_own[entry.worker] = Some(own.clone());
                mixed
            } else {
                own.clone()
            };
            applied_this_round.push(own);
            consumed_total += 1;
            for &f in &selected {
                let range = partition.boundaries[f].clone();
                let age = partition.ages[f];
                let tau_eff = if outer.method == Method::PaCgad {
                    entry.tau.max(age)
                } else {
                    entry.tau
                };
                let grad_norm_sq = if track_grad {
                    objective.exact_grad(&global).map(|g| g.iter().map(|x| x * x).sum())
                } else {
                    None
                };
                let slice = &grad[range.clone()];
                let outcome = optimizers[f].step(&mut global[range], slice, tau_eff as f64)?;
                round_sigma.push(outcome.sigma);
                if outcome.applied {
                    round_applied += 1;
                    applied_total += 1;
                }
                round_step = round_step.max(outcome.step_inf);
                trace.push(UpdateRecord {
                    round,
                    worker: entry.worker,
                    produced_round: entry.produced_round,
                    tau: entry.tau,
                    fragment: f,
                    age: age as f64,
                    sigma: outcome.sigma,
                    applied: outcome.applied,
                    rho: outcome.rho,
                    step_inf: outcome.step_inf,
                    grad_norm_sq,
                    pseudo_grad_norm_sq: slice.iter().map(|x| x * x).sum(),
                });
            }
            if global.iter().any(|p| !p.is_finite()) {
                non_finite = true;
                break 'rounds;
            }
        }
        if eager && !applied_this_round.is_empty() {
            let n = applied_this_round.len() as f64;
            let mut avg = vec![0.0; dim];
            for d in &applied_this_round {
                for (a, x) in avg.iter_mut().zip(d) {
                    *a += x;
                }
            }
            avg.iter_mut().for_each(|a| *a /= n);
            prev_avg = Some(avg);
        }
        partition.advance(&selected);

        let loss = objective.loss(&global, &eval)?;
        if !loss.is_finite() {
            non_finite = true;
            break;
        }
        losses.push(loss);
        rounds.push(RoundMetrics {
            round,
            eval_loss: loss,
            consumed: due.len(),
            applied: round_applied,
            mean_sigma: round_sigma.get(),
            max_step_inf: round_step,
        });
    }

    let window = &losses[losses.len().saturating_sub(FINAL_LOSS_WINDOW)..];
    let final_loss = if window.is_empty() {
        initial_loss
    } else {
        window.iter().sum::<f64>() / window.len() as f64
    };
    let divergence_reason = if non_finite || !final_loss.is_finite() {
        Some(DivergenceReason::NonFinite)
    } else if final_loss > DIVERGENCE_FACTOR * reference_loss {
        Some(DivergenceReason::LossAboveReference)
    } else {
        None
    };

    let exact = objective.quadratic().map(|_| ExactProblem {
        smoothness: objective.smoothness().expect("quadratic smoothness"),
        f_gap: initial_loss,
    });
    let theory = audit_run(
        &trace,
        &AuditContext {
            gate: outer.effective_gate(),
            eta: outer.eta,
            check_step_bound: outer.method.is_adam_family(),
            exact,
        },
    )?;

    let result = RunResult {
        config_hash: cfg.hash(),
        seed,
        method: outer.method,
        schedule: cfg.delay.to_string(),
        initial_loss,
        reference_loss,
        rounds_completed: losses.len() as u64,
        losses,
        final_loss,
        diverged: divergence_reason.is_some(),
        divergence_reason,
        consumed_entries: consumed_total,
        applied_steps: applied_total,
        in_flight_dropped: queue.len() as u64,
        sigma_bar: theory.sigma_bar,
        rho_max: theory.rho_max,
        mean_selected_age: selected_age.get().unwrap_or(0.0),
        theory,
        wall_time_s: started.elapsed().as_secs_f64(),
        config: cfg,
    };
    Ok(RunOutput {
        result,
        rounds,
        trace,
        final_params: global,
    })
}
