//! Ready-made task and run configurations used by `verify`, the tests and
//! the shipped example configs.

use crate::config::{FragmentSpec, OuterSpec, RunConfig, CONFIG_VERSION};
use crate::objective::ObjectiveSpec;
use crate::optim::{InnerConfig, Method};
use crate::simulator::DelaySchedule;

pub const WORKERS: usize = 4;
pub const INNER_STEPS: usize = 8;
pub const EVAL_BATCH: usize = 256;

/// 16-dimensional noisy quadratic with condition number 20.
pub fn quadratic_task() -> ObjectiveSpec {
    ObjectiveSpec::Quadratic {
        dim: 16,
        eig_min: 0.05,
        eig_max: 1.0,
        seed: 1,
        noise_std: 0.1,
        batch_size: 8,
        init_std: 1.0,
    }
}

/// Teacher-student regression: 8 inputs, a 32-unit tanh student fitting a
/// 16-unit teacher.
pub fn mlp_task() -> ObjectiveSpec {
    ObjectiveSpec::MlpRegression {
        input_dim: 8,
        hidden: vec![32],
        teacher_hidden: vec![16],
        teacher_scale: 1.0,
        teacher_seed: 7,
        init_scale: 1.0,
        batch_size: 32,
    }
}

pub fn run_config(objective: ObjectiveSpec, method: Method, delay: DelaySchedule, seed: u64, rounds: u64) -> RunConfig {
    RunConfig {
        version: CONFIG_VERSION,
        objective,
        workers: WORKERS,
        inner_steps: INNER_STEPS,
        rounds,
        outer: OuterSpec::new(method),
        inner: InnerConfig::default(),
        delay,
        fragments: FragmentSpec::default(),
        quantize_queue: false,
        seed,
        eval_batch_size: EVAL_BATCH,
    }
    .resolved()
}
