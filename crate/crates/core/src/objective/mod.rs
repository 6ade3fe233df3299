//! Synthetic training objectives with exact analytic gradients.

mod mlp;
mod quadratic;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{derive_seed, stream_rng};

pub use mlp::{MlpShape, MlpTask};
pub use quadratic::Quadratic;

/// Number of initializations averaged into the untrained reference loss.
pub const REFERENCE_SEEDS: u64 = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("parameter vector has length {got}, objective expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("batch kind does not match objective `{0}`")]
    BatchMismatch(&'static str),
}

/// Objective description as it appears in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Quadratic {
        dim: usize,
        eig_min: f64,
        eig_max: f64,
        seed: u64,
        /// Std of the additive linear gradient noise per sample.
        noise_std: f64,
        batch_size: usize,
        init_std: f64,
    },
    RosenbrockSum {
        dim: usize,
        noise_std: f64,
        batch_size: usize,
    },
    MlpRegression {
        input_dim: usize,
        hidden: Vec<usize>,
        teacher_hidden: Vec<usize>,
        teacher_scale: f64,
        teacher_seed: u64,
        init_scale: f64,
        batch_size: usize,
    },
}

impl ObjectiveSpec {
    pub fn batch_size(&self) -> usize {
        match self {
            ObjectiveSpec::Quadratic { batch_size, .. }
            | ObjectiveSpec::RosenbrockSum { batch_size, .. }
            | ObjectiveSpec::MlpRegression { batch_size, .. } => *batch_size,
        }
    }

    pub fn validate(&self, prefix: &str) -> Vec<(String, String)> {
        let mut issues = Vec::new();
        let mut bad = |field: &str, msg: &str| issues.push((format!("{prefix}.{field}"), msg.to_string()));
        if self.batch_size() == 0 {
            bad("batch_size", "must be at least 1");
        }
        match self {
            ObjectiveSpec::Quadratic {
                dim,
                eig_min,
                eig_max,
                noise_std,
                init_std,
                ..
            } => {
                if *dim == 0 {
                    bad("dim", "must be at least 1");
                }
                if !(*eig_min > 0.0 && eig_min.is_finite()) {
                    bad("eig_min", "must be positive and finite");
                }
                if !(*eig_max >= *eig_min && eig_max.is_finite()) {
                    bad("eig_max", "must be finite and at least eig_min");
                }
                if !(*noise_std >= 0.0 && noise_std.is_finite()) {
                    bad("noise_std", "must be nonnegative and finite");
                }
                if !(*init_std >= 0.0 && init_std.is_finite()) {
                    bad("init_std", "must be nonnegative and finite");
                }
            }
            ObjectiveSpec::RosenbrockSum { dim, noise_std, .. } => {
                if *dim < 2 {
                    bad("dim", "must be at least 2");
                }
                if !(*noise_std >= 0.0 && noise_std.is_finite()) {
                    bad("noise_std", "must be nonnegative and finite");
                }
            }
            ObjectiveSpec::MlpRegression {
                input_dim,
                hidden,
                teacher_hidden,
                teacher_scale,
                init_scale,
                ..
            } => {
                if *input_dim == 0 {
                    bad("input_dim", "must be at least 1");
                }
                if hidden.contains(&0) {
                    bad("hidden", "layer sizes must be positive");
                }
                if teacher_hidden.contains(&0) {
                    bad("teacher_hidden", "layer sizes must be positive");
                }
                if !teacher_scale.is_finite() {
                    bad("teacher_scale", "must be finite");
                }
                if !(*init_scale > 0.0 && init_scale.is_finite()) {
                    bad("init_scale", "must be positive and finite");
                }
            }
        }
        issues
    }

    pub fn build(&self) -> Objective {
        match self {
            ObjectiveSpec::Quadratic {
                dim,
                eig_min,
                eig_max,
                seed,
                noise_std,
                batch_size,
                init_std,
            } => Objective {
                kind: ObjectiveKind::Quadratic {
                    problem: Quadratic::new(*dim, *eig_min, *eig_max, *seed),
                    noise_std: *noise_std,
                    init_std: *init_std,
                },
                batch_size: *batch_size,
            },
            ObjectiveSpec::RosenbrockSum {
                dim,
                noise_std,
                batch_size,
            } => Objective {
                kind: ObjectiveKind::Rosenbrock {
                    dim: *dim,
                    noise_std: *noise_std,
                },
                batch_size: *batch_size,
            },
            ObjectiveSpec::MlpRegression {
                input_dim,
                hidden,
                teacher_hidden,
                teacher_scale,
                teacher_seed,
                init_scale,
                batch_size,
            } => Objective {
                kind: ObjectiveKind::Mlp(MlpTask::new(
                    *input_dim,
                    hidden,
                    teacher_hidden,
                    *teacher_scale,
                    *teacher_seed,
                    *init_scale,
                )),
                batch_size: *batch_size,
            },
        }
    }
}

/// A sample set. Noise-type objectives draw additive gradient-noise vectors;
/// `Exact` evaluates the noise-free population objective.
#[derive(Debug, Clone, PartialEq)]
pub enum Batch {
    Exact,
    Noise(Vec<Vec<f64>>),
    Regression { xs: Vec<Vec<f64>>, ys: Vec<f64> },
}

impl Batch {
    pub fn len(&self) -> usize {
        match self {
            Batch::Exact => 0,
            Batch::Noise(v) => v.len(),
            Batch::Regression { ys, .. } => ys.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Single-sample batches, in order.
    pub fn split(&self) -> Vec<Batch> {
        match self {
            Batch::Exact => vec![Batch::Exact],
            Batch::Noise(v) => v.iter().map(|n| Batch::Noise(vec![n.clone()])).collect(),
            Batch::Regression { xs, ys } => xs
                .iter()
                .zip(ys)
                .map(|(x, &y)| Batch::Regression {
                    xs: vec![x.clone()],
                    ys: vec![y],
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
enum ObjectiveKind {
    Quadratic {
        problem: Quadratic,
        noise_std: f64,
        init_std: f64,
    },
    Rosenbrock {
        dim: usize,
        noise_std: f64,
    },
    Mlp(MlpTask),
}

/// An immutable, constructed objective.
#[derive(Debug, Clone)]
pub struct Objective {
    kind: ObjectiveKind,
    batch_size: usize,
}

/// A worker's data shard: a seeded stream of minibatches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shard {
    pub worker: usize,
    pub seed: u64,
    pub batch_size: usize,
}

impl Shard {
    pub fn new(master_seed: u64, worker: usize, batch_size: usize) -> Self {
        Self {
            worker,
            seed: derive_seed(master_seed, "shard", &[worker as u64]),
            batch_size,
        }
    }
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self.kind {
            ObjectiveKind::Quadratic { .. } => "quadratic",
            ObjectiveKind::Rosenbrock { .. } => "rosenbrock_sum",
            ObjectiveKind::Mlp(_) => "mlp_regression",
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ObjectiveKind::Quadratic { problem, .. } => problem.dim(),
            ObjectiveKind::Rosenbrock { dim, .. } => *dim,
            ObjectiveKind::Mlp(task) => task.student.param_count(),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Smoothness constant where it is known analytically.
    pub fn smoothness(&self) -> Option<f64> {
        match &self.kind {
            ObjectiveKind::Quadratic { problem, .. } => Some(problem.smoothness()),
            _ => None,
        }
    }

    pub fn quadratic(&self) -> Option<&Quadratic> {
        match &self.kind {
            ObjectiveKind::Quadratic { problem, .. } => Some(problem),
            _ => None,
        }
    }

    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match &self.kind {
            ObjectiveKind::Quadratic { problem, init_std, .. } => {
                let n = Normal::new(0.0, *init_std).expect("finite std");
                (0..problem.dim()).map(|_| n.sample(rng)).collect()
            }
            ObjectiveKind::Rosenbrock { dim, .. } => {
                let n = Normal::new(0.0, 0.1).expect("finite std");
                (0..*dim)
                    .map(|i| if i % 2 == 0 { -1.2 } else { 1.0 } + n.sample(rng))
                    .collect()
            }
            ObjectiveKind::Mlp(task) => task.student.init(rng, task.init_scale),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Batch {
        match &self.kind {
            ObjectiveKind::Quadratic { noise_std, .. } | ObjectiveKind::Rosenbrock { noise_std, .. } => {
                let dist = Normal::new(0.0, *noise_std).expect("finite std");
                let d = self.dim();
                Batch::Noise(
                    (0..n)
                        .map(|_| (0..d).map(|_| dist.sample(rng)).collect())
                        .collect(),
                )
            }
            ObjectiveKind::Mlp(task) => {
                let (xs, ys) = task.sample(rng, n);
                Batch::Regression { xs, ys }
            }
        }
    }

    /// Minibatch for `(round, inner_step)` of a shard; a pure function of
    /// the shard seed and the two counters.
    pub fn sample_batch(&self, shard: &Shard, round: u64, inner_step: u64) -> Batch {
        let mut rng = stream_rng(shard.seed, "batch", &[round, inner_step]);
        self.sample(&mut rng, shard.batch_size)
    }

    /// Held-out evaluation batch. Noise-type objectives evaluate exactly.
    pub fn eval_batch(&self, seed: u64, n: usize) -> Batch {
        match self.kind {
            ObjectiveKind::Mlp(_) => self.sample(&mut stream_rng(seed, "eval", &[]), n),
            _ => Batch::Exact,
        }
    }

    pub fn loss_and_grad(&self, params: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>), ObjectiveError> {
        if params.len() != self.dim() {
            return Err(ObjectiveError::ShapeMismatch {
                expected: self.dim(),
                got: params.len(),
            });
        }
        match (&self.kind, batch) {
            (ObjectiveKind::Quadratic { problem, .. }, Batch::Exact) => Ok(problem.loss_and_grad(params, None)),
            (ObjectiveKind::Quadratic { problem, .. }, Batch::Noise(noise)) => {
                Ok(problem.loss_and_grad(params, Some(&mean_noise(noise, params.len()))))
            }
            (ObjectiveKind::Rosenbrock { .. }, Batch::Exact) => Ok(rosenbrock(params, None)),
            (ObjectiveKind::Rosenbrock { .. }, Batch::Noise(noise)) => {
                Ok(rosenbrock(params, Some(&mean_noise(noise, params.len()))))
            }
            (ObjectiveKind::Mlp(task), Batch::Regression { xs, ys }) => Ok(task.loss_and_grad(params, xs, ys)),
            _ => Err(ObjectiveError::BatchMismatch(self.name())),
        }
    }

    pub fn loss(&self, params: &[f64], batch: &Batch) -> Result<f64, ObjectiveError> {
        match (&self.kind, batch) {
            (ObjectiveKind::Mlp(task), Batch::Regression { xs, ys }) if params.len() == self.dim() => {
                Ok(task.loss(params, xs, ys))
            }
            _ => self.loss_and_grad(params, batch).map(|(l, _)| l),
        }
    }

    /// Gradient of the population objective, when it is available in closed
    /// form (noise-type objectives).
    pub fn exact_grad(&self, params: &[f64]) -> Option<Vec<f64>> {
        match self.kind {
            ObjectiveKind::Mlp(_) => None,
            _ => self.loss_and_grad(params, &Batch::Exact).ok().map(|(_, g)| g),
        }
    }

    /// Untrained reference loss: mean initial loss over
    /// [`REFERENCE_SEEDS`] fixed initializations on a fixed evaluation batch.
    pub fn init_reference_loss(&self, eval_batch_size: usize) -> f64 {
        let batch = self.eval_batch(derive_seed(0, "reference-eval", &[]), eval_batch_size);
        let total: f64 = (0..REFERENCE_SEEDS)
            .map(|i| {
                let p = self.init_params(&mut stream_rng(0, "reference-init", &[i]));
                self.loss(&p, &batch).unwrap_or(f64::NAN)
            })
            .sum();
        total / REFERENCE_SEEDS as f64
    }
}

/// The noise enters linearly, so the batch mean of per-sample losses equals
/// the loss at the mean noise vector.
fn mean_noise(samples: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let n = samples.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Chained Rosenbrock `sum_i 100 (x_{i+1} - x_i^2)^2 + (1 - x_i)^2` plus an
/// optional linear noise term `xi'x`.
fn rosenbrock(x: &[f64], noise: Option<&[f64]>) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() - 1 {
        let a = x[i + 1] - x[i] * x[i];
        let b = 1.0 - x[i];
        loss += 100.0 * a * a + b * b;
        grad[i] += -400.0 * x[i] * a - 2.0 * b;
        grad[i + 1] += 200.0 * a;
    }
    if let Some(xi) = noise {
        for i in 0..x.len() {
            loss += xi[i] * x[i];
            grad[i] += xi[i];
        }
    }
    (loss, grad)
}

/// Outcome of a central-difference gradient comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub passed: bool,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Compare `analytic` against central differences of the batch loss with
/// step `1e-6 * (1 + |x_i|)`.
///
/// The per-coordinate error is `|a - n| / max(1, |a|, |n|)`: relative for
/// gradients of order one and above, absolute below that.
pub fn finite_diff_compare(
    obj: &Objective,
    params: &[f64],
    batch: &Batch,
    analytic: &[f64],
    tolerance: f64,
) -> Result<FdReport, ObjectiveError> {
    let mut x = params.to_vec();
    let mut worst = (0.0f64, 0usize);
    for i in 0..params.len() {
        let h = 1e-6 * (1.0 + params[i].abs());
        let (hi, lo) = (params[i] + h, params[i] - h);
        x[i] = hi;
        let up = obj.loss(&x, batch)?;
        x[i] = lo;
        let down = obj.loss(&x, batch)?;
        x[i] = params[i];
        // divide by the perturbation actually applied, not the nominal 2h
        let numeric = (up - down) / (hi - lo);
        let a = analytic[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    Ok(FdReport {
        passed: worst.0 <= tolerance,
        max_rel_error: worst.0,
        worst_index: worst.1,
    })
}

pub fn finite_diff_check(
    obj: &Objective,
    params: &[f64],
    batch: &Batch,
    tolerance: f64,
) -> Result<FdReport, ObjectiveError> {
    let (_, grad) = obj.loss_and_grad(params, batch)?;
    finite_diff_compare(obj, params, batch, &grad, tolerance)
}
