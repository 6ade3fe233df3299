//! Self-checks run by `stale-lab verify`.
//!
//! Each checker takes the implementation under test as an argument, so the
//! tests can feed it deliberately broken variants and confirm it notices.

use std::f64::consts::E;

use rand::Rng;

use super::presets;
use crate::config::{FragmentSpec, GateSpec};
use crate::gate::{StalenessGate, TauCut};
use crate::objective::{finite_diff_check, Objective};
use crate::optim::{
    cgad_step, inner_adamw_step, AdamHyper, AdamMoments, GatePlacement, InnerConfig, Method, OptimError, StepOutcome,
};
use crate::seed::stream_rng;
use crate::simulator::{dequantize_payload, quantize_payload, simulate, DelaySchedule, FragmentPartition, SimError};

/// The gated Adam kernel's signature.
pub type CgadKernel = fn(
    &mut [f64],
    &[f64],
    f64,
    &mut AdamMoments,
    &AdamHyper,
    &StalenessGate,
    GatePlacement,
) -> Result<StepOutcome, OptimError>;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    /// Empty when the check passed.
    pub violations: Vec<String>,
    pub detail: String,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn outcome(name: &'static str, result: Result<String, Vec<String>>) -> CheckOutcome {
    match result {
        Ok(detail) => CheckOutcome {
            name,
            violations: vec![],
            detail,
        },
        Err(violations) => CheckOutcome {
            name,
            detail: String::new(),
            violations,
        },
    }
}

/// Gate identities for an arbitrary weight function: `w(0) = 1`, zero at
/// and beyond the cutoff, nonincreasing on a 0.01 grid to twice the cutoff,
/// and `max tau w(tau) <= 1/(e alpha)` when the cutoff is at least `1/alpha`.
pub fn check_gate_identities(weight: &dyn Fn(f64) -> f64, alpha: f64, tau_cut: f64) -> Result<String, Vec<String>> {
    let mut v = Vec::new();
    if weight(0.0) != 1.0 {
        v.push(format!("identity at zero: w(0) = {}", weight(0.0)));
    }
    for k in 0..=200 {
        let tau = tau_cut + k as f64 * 0.5;
        if weight(tau) != 0.0 {
            v.push(format!("cutoff: w({tau}) = {}", weight(tau)));
            break;
        }
    }
    let steps = (200.0 * tau_cut).round() as usize;
    let mut prev = weight(0.0);
    let mut best = 0.0f64;
    for k in 1..=steps {
        let tau = k as f64 * 0.01;
        let w = weight(tau);
        if w > prev {
            v.push(format!("monotone: w({tau}) = {w} > w({}) = {prev}", (k - 1) as f64 * 0.01));
            break;
        }
        best = best.max(tau * w);
        prev = w;
    }
    let reference = 1.0 / (E * alpha);
    if tau_cut >= 1.0 / alpha && best > reference + 1e-12 {
        v.push(format!("max tau*w = {best} exceeds 1/(e alpha) = {reference}"));
    }
    if v.is_empty() {
        Ok(format!("alpha={alpha} tau_cut={tau_cut}: max tau*sigma {best:.6} <= {reference:.6}"))
    } else {
        Err(v)
    }
}

fn gate_suite() -> Result<String, Vec<String>> {
    let mut details = Vec::new();
    for alpha in [0.025, 0.05, 0.1, 0.2, 0.4] {
        let gate = StalenessGate::new(alpha, TauCut::Finite(32.0)).map_err(|e| vec![e.to_string()])?;
        let w = |t: f64| gate.evaluate(t).unwrap_or(f64::NAN);
        details.push(check_gate_identities(&w, alpha, 32.0)?);
    }
    Ok(format!("{} gates", details.len()))
}

fn random_stream(seed: u64, steps: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, "verify-grads", &[]);
    (0..steps)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

/// Two properties of a gated Adam kernel:
/// at `tau = 0` it matches the inner Adam step bit for bit over 100 steps,
/// and a dropped update leaves no trace on the following steps.
pub fn check_adam_equivalence(kernel: CgadKernel) -> Result<String, Vec<String>> {
    let mut v = Vec::new();
    let hyper = AdamHyper {
        eta: 1e-3,
        beta1: 0.9,
        beta2: 0.95,
        epsilon: 1e-8,
    };
    let inner = InnerConfig {
        lr: hyper.eta,
        beta1: hyper.beta1,
        beta2: hyper.beta2,
        epsilon: hyper.epsilon,
        weight_decay: 0.0,
    };
    let gate = StalenessGate::default();
    let grads = random_stream(1, 100, 6);

    let mut p_gated = vec![0.5; 6];
    let mut p_plain = p_gated.clone();
    let mut s_gated = AdamMoments::zeros(6);
    let mut s_plain = AdamMoments::zeros(6);
    for (i, g) in grads.iter().enumerate() {
        if let Err(e) = kernel(&mut p_gated, g, 0.0, &mut s_gated, &hyper, &gate, GatePlacement::Before) {
            return Err(vec![e.to_string()]);
        }
        inner_adamw_step(&mut p_plain, g, &mut s_plain, &inner).map_err(|e| vec![e.to_string()])?;
        if p_gated != p_plain || s_gated != s_plain {
            v.push(format!("tau=0 equivalence broken at step {i}"));
            break;
        }
    }

    // Same stream twice; the second run gets an extra stale update at step 50
    // that the gate must drop without touching anything.
    let mut p_ref = vec![0.5; 6];
    let mut p_drop = p_ref.clone();
    let mut s_ref = AdamMoments::zeros(6);
    let mut s_drop = AdamMoments::zeros(6);
    for (i, g) in grads.iter().enumerate() {
        if i == 50 {
            let stale = vec![3.0; 6];
            if let Err(e) = kernel(&mut p_drop, &stale, 40.0, &mut s_drop, &hyper, &gate, GatePlacement::Before) {
                return Err(vec![e.to_string()]);
            }
        }
        let a = kernel(&mut p_ref, g, 0.0, &mut s_ref, &hyper, &gate, GatePlacement::Before);
        let b = kernel(&mut p_drop, g, 0.0, &mut s_drop, &hyper, &gate, GatePlacement::Before);
        if a.is_err() || b.is_err() {
            return Err(vec!["kernel error".into()]);
        }
        if p_ref != p_drop || s_ref != s_drop {
            v.push(format!("equivalence after drop broken at step {i}"));
            break;
        }
    }
    if v.is_empty() {
        Ok("100 steps bit-identical; dropped update left no trace".into())
    } else {
        Err(v)
    }
}

fn sim_err(e: SimError) -> Vec<String> {
    vec![e.to_string()]
}

fn reductions() -> Result<String, Vec<String>> {
    let mut v = Vec::new();
    let quad = presets::quadratic_task();
    let tau8 = DelaySchedule::Fixed { tau: 8 };

    let mut cgad_inf = presets::run_config(quad.clone(), Method::Cgad, tau8.clone(), 3, 50);
    cgad_inf.outer.gate = Some(GateSpec {
        alpha: Some(0.2),
        tau_cut: Some(TauCut::Infinite),
    });
    let decay = presets::run_config(quad.clone(), Method::AdamDecay, tau8.clone(), 3, 50);
    let a = simulate(&cgad_inf, None).map_err(sim_err)?;
    let b = simulate(&decay, None).map_err(sim_err)?;
    if a.final_params != b.final_params || a.result.losses != b.result.losses {
        v.push("cgad with infinite cutoff differs from adam_decay".into());
    }

    let tau0 = DelaySchedule::Fixed { tau: 0 };
    let a = simulate(&presets::run_config(quad.clone(), Method::Cgad, tau0.clone(), 3, 50), None).map_err(sim_err)?;
    let b = simulate(&presets::run_config(quad.clone(), Method::Adam, tau0, 3, 50), None).map_err(sim_err)?;
    if a.final_params != b.final_params {
        v.push("cgad at tau=0 differs from adam".into());
    }

    let mut pa = presets::run_config(quad.clone(), Method::PaCgad, DelaySchedule::uniform_default(), 3, 50);
    pa.fragments = FragmentSpec { count: 4, budget: 4 };
    let mut cg = pa.clone();
    cg.outer.method = Method::Cgad;
    let a = simulate(&pa, None).map_err(sim_err)?;
    let b = simulate(&cg, None).map_err(sim_err)?;
    if a.final_params != b.final_params || a.result.losses != b.result.losses {
        v.push("pa_cgad with full budget differs from cgad".into());
    }
    if v.is_empty() {
        Ok("adam_decay, adam and full-budget pa_cgad reductions hold".into())
    } else {
        Err(v)
    }
}

fn determinism() -> Result<String, Vec<String>> {
    let cfg = presets::run_config(presets::quadratic_task(), Method::Cgad, DelaySchedule::exponential_default(), 9, 30);
    let a = simulate(&cfg, None).map_err(sim_err)?.result.to_json();
    let b = simulate(&cfg, None).map_err(sim_err)?.result.to_json();
    let reversed: Vec<usize> = (0..cfg.workers).rev().collect();
    let c = simulate(&cfg, Some(&reversed)).map_err(sim_err)?.result.to_json();
    match (a == b, a == c) {
        (true, true) => Ok("repeat and reversed worker order give identical JSON".into()),
        (false, _) => Err(vec!["repeated run differs".into()]),
        (_, false) => Err(vec!["worker iteration order changes the result".into()]),
    }
}

fn step_bound_audit() -> Result<String, Vec<String>> {
    let cfg = presets::run_config(presets::quadratic_task(), Method::Cgad, DelaySchedule::uniform_default(), 4, 64);
    let r = simulate(&cfg, None).map_err(sim_err)?.result;
    let t = &r.theory;
    if t.step_bound_violations > 0 || t.step_bound_checked == 0 {
        return Err(vec![format!(
            "{} violations over {} steps",
            t.step_bound_violations, t.step_bound_checked
        )]);
    }
    Ok(format!(
        "0 violations over {} steps; rho <= 1 on {:.1}% of steps",
        t.step_bound_checked,
        100.0 * t.rho_le_one_fraction.unwrap_or(0.0)
    ))
}

fn conservation() -> Result<String, Vec<String>> {
    let cfg = presets::run_config(presets::quadratic_task(), Method::Cgad, DelaySchedule::Fixed { tau: 3 }, 2, 12);
    let r = simulate(&cfg, None).map_err(sim_err)?.result;
    let k = cfg.workers as u64;
    if r.consumed_entries == k * 9 && r.in_flight_dropped == k * 3 {
        Ok(format!("{} entries applied, {} dropped in flight", r.consumed_entries, r.in_flight_dropped))
    } else {
        Err(vec![format!(
            "expected {} applied / {} in flight, got {} / {}",
            k * 9,
            k * 3,
            r.consumed_entries,
            r.in_flight_dropped
        )])
    }
}

fn quantization() -> Result<String, Vec<String>> {
    let mut rng = stream_rng(17, "verify-quant", &[]);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let len = rng.random_range(1..40usize);
        let scale = 10f64.powf(rng.random_range(-6.0..3.0));
        let g: Vec<f64> = (0..len).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let parts = FragmentPartition::even(len, rng.random_range(1..=len.min(4)));
        let q = quantize_payload(&g, &parts.boundaries);
        let d = dequantize_payload(&q, &parts.boundaries);
        for (f, range) in parts.boundaries.iter().enumerate() {
            let half = q.scale(f) / 2.0;
            for i in range.clone() {
                let err = (d[i] - g[i]).abs();
                if err > half * (1.0 + 1e-12) {
                    return Err(vec![format!("error {err} above half scale {half}")]);
                }
                worst = worst.max(err / half.max(f64::MIN_POSITIVE));
            }
        }
    }
    let zeros = [0.0; 5];
    let q = quantize_payload(&zeros, &[0..5]);
    if dequantize_payload(&q, &[0..5]) != zeros || q.scale(0) != 0.0 {
        return Err(vec!["all-zero fragment not exact".into()]);
    }
    Ok(format!("1000 vectors, worst error {worst:.3} of half scale"))
}

fn finite_differences() -> Result<String, Vec<String>> {
    let mut v = Vec::new();
    let mut worst = [0.0f64; 2];
    for (slot, spec, tol) in [(0, presets::quadratic_task(), 1e-8), (1, presets::mlp_task(), 1e-5)] {
        let obj: Objective = spec.build();
        for draw in 0..5u64 {
            let mut rng = stream_rng(23, "verify-fd", &[slot as u64, draw]);
            let params = obj.init_params(&mut rng);
            let batch = obj.sample(&mut rng, 4);
            match finite_diff_check(&obj, &params, &batch, tol) {
                Ok(r) => {
                    worst[slot] = worst[slot].max(r.max_rel_error);
                    if !r.passed {
                        v.push(format!("{} draw {draw}: error {:.3e}", obj.name(), r.max_rel_error));
                    }
                }
                Err(e) => v.push(e.to_string()),
            }
        }
    }
    if v.is_empty() {
        Ok(format!("quadratic {:.1e}, mlp {:.1e}", worst[0], worst[1]))
    } else {
        Err(v)
    }
}

/// Runs every check in order.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        outcome("gate identities", gate_suite()),
        outcome("adam equivalence", check_adam_equivalence(cgad_step)),
        outcome("reduction laws", reductions()),
        outcome("determinism", determinism()),
        outcome("step bound audit", step_bound_audit()),
        outcome("update conservation", conservation()),
        outcome("quantization round trip", quantization()),
        outcome("finite differences", finite_differences()),
    ]
}

pub fn report(outcomes: &[CheckOutcome]) -> String {
    let mut s = String::new();
    for o in outcomes {
        if o.passed() {
            s.push_str(&format!("PASS  {}: {}\n", o.name, o.detail));
        } else {
            s.push_str(&format!("FAIL  {}\n", o.name));
            for v in &o.violations {
                s.push_str(&format!("      {v}\n"));
            }
        }
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    s.push_str(&format!("{} checks, {} failed\n", outcomes.len(), failed));
    s
}
