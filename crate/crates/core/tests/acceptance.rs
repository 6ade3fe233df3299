//! Acceptance report: one line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report is always
//! printed. The process fails if a criterion fails that is not listed in
//! `KNOWN_FAILURES`; listed ones still print `FAIL`.

use std::f64::consts::{E, PI};
use std::time::{Duration, Instant};

use rand::Rng;

use stale_lab::config::{FragmentSpec, GateSpec, RunConfig};
use stale_lab::gate::{StalenessGate, TauCut};
use stale_lab::harness::presets::{mlp_task, quadratic_task, run_config};
use stale_lab::harness::{summarize_results, Summary};
use stale_lab::objective::finite_diff_check;
use stale_lab::optim::{inner_adamw_step, AdamMoments, GatePlacement, InnerConfig, Method, OuterConfig, OuterOptimizer};
use stale_lab::seed::stream_rng;
use stale_lab::simulator::{dequantize_payload, quantize_payload, run_experiment, simulate, DelaySchedule, RunResult};
use stale_lab::theory::{bound_terms, TheoryInputs};

/// Criteria that fail with the shipped defaults; see the README.
const KNOWN_FAILURES: &[(u32, &str)] = &[
    (6, "sigma(16) = 0.0204 shrinks every CGAD step about 49x, so tau=16 cannot track its tau=0 loss in 200 rounds"),
    (7, "same step suppression; uniform delays over 0..=16 average sigma near 0.29"),
];

struct Line {
    id: u32,
    passed: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

fn timed(id: u32, budget_s: u64, f: impl FnOnce() -> (bool, String)) -> Line {
    let start = Instant::now();
    let (passed, detail) = f();
    let elapsed = start.elapsed();
    let budget = Duration::from_secs(budget_s);
    Line {
        id,
        passed: passed && elapsed < budget,
        detail,
        elapsed,
        budget,
    }
}

fn sigma(alpha: f64, cut: f64, tau: f64) -> f64 {
    // independent transcription of the gate
    if tau >= cut {
        0.0
    } else {
        0.5 * (1.0 + (PI * tau / cut).cos()) * (-alpha * tau).exp()
    }
}

fn criterion_1() -> (bool, String) {
    let mut ok = true;
    let mut worst_margin = f64::INFINITY;
    for alpha in [0.025, 0.05, 0.1, 0.2, 0.4] {
        let gate = StalenessGate::new(alpha, TauCut::Finite(32.0)).unwrap();
        let s = |t: f64| gate.evaluate(t).unwrap();
        ok &= s(0.0) == 1.0;
        let mut prev = 1.0;
        let mut max_ts = 0.0f64;
        for k in 1..=6400 {
            let tau = k as f64 * 0.01;
            let v = s(tau);
            ok &= v <= prev;
            if tau >= 32.0 {
                ok &= v == 0.0;
            }
            ok &= (v - sigma(alpha, 32.0, tau)).abs() <= 1e-15;
            max_ts = max_ts.max(tau * v);
            prev = v;
        }
        let reference = 1.0 / (E * alpha);
        ok &= max_ts <= reference + 1e-12;
        worst_margin = worst_margin.min(reference - max_ts);
    }
    (ok, format!("5 gates; smallest margin below 1/(e alpha): {worst_margin:.4}"))
}

fn criterion_2() -> (bool, String) {
    // (a) kernel level, 100 steps
    let dim = 8;
    let cgad_cfg = OuterConfig::defaults(Method::Cgad);
    let adam_cfg = OuterConfig::defaults(Method::Adam);
    let mut cgad = OuterOptimizer::new(&cgad_cfg, dim);
    let mut adam = OuterOptimizer::new(&adam_cfg, dim);
    let inner = InnerConfig {
        lr: 1e-3,
        ..InnerConfig::default()
    };
    let mut plain_state = AdamMoments::zeros(dim);
    let mut p1 = vec![0.25; dim];
    let mut p2 = p1.clone();
    let mut p3 = p1.clone();
    let mut rng = stream_rng(77, "acceptance-grads", &[]);
    let mut a_ok = true;
    for _ in 0..100 {
        let g: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        cgad.step(&mut p1, &g, 0.0).unwrap();
        adam.step(&mut p2, &g, 0.0).unwrap();
        inner_adamw_step(&mut p3, &g, &mut plain_state, &inner).unwrap();
        a_ok &= p1 == p2 && p1 == p3;
    }
    a_ok &= cgad.adam_moments() == Some(&plain_state);

    // (b) run level, infinite cutoff vs adam_decay
    let quad = quadratic_task();
    let mut inf = run_config(quad.clone(), Method::Cgad, DelaySchedule::uniform_default(), 2, 100);
    inf.outer.gate = Some(GateSpec {
        alpha: Some(0.2),
        tau_cut: Some(TauCut::Infinite),
    });
    let decay = run_config(quad.clone(), Method::AdamDecay, DelaySchedule::uniform_default(), 2, 100);
    let (x, y) = (simulate(&inf, None).unwrap(), simulate(&decay, None).unwrap());
    let b_ok = x.final_params == y.final_params && x.result.losses == y.result.losses;

    // (c) full-budget partial sync, 50 rounds
    let mut pa = run_config(quad, Method::PaCgad, DelaySchedule::uniform_default(), 2, 50);
    pa.fragments = FragmentSpec { count: 4, budget: 4 };
    let mut cg = pa.clone();
    cg.outer.method = Method::Cgad;
    let (x, y) = (simulate(&pa, None).unwrap(), simulate(&cg, None).unwrap());
    let c_ok = x.final_params == y.final_params && x.result.losses == y.result.losses;
    (a_ok && b_ok && c_ok, format!("(a) {a_ok} (b) {b_ok} (c) {c_ok}"))
}

fn criterion_3() -> (bool, String) {
    let mut a = run_config(quadratic_task(), Method::Cgad, DelaySchedule::uniform_default(), 11, 80);
    a.quantize_queue = true;
    let b = run_config(mlp_task(), Method::Nesterov, DelaySchedule::exponential_default(), 12, 60);
    let mut c = run_config(quadratic_task(), Method::PaCgad, DelaySchedule::Fixed { tau: 3 }, 13, 80);
    c.fragments = FragmentSpec { count: 8, budget: 3 };
    let configs = [a, b, c];
    let same = configs
        .iter()
        .filter(|cfg| run_experiment(cfg).unwrap().to_json() == run_experiment(cfg).unwrap().to_json())
        .count();
    (same == 3, format!("{same}/3 configs byte-identical on rerun"))
}

fn criterion_4() -> (bool, String) {
    let cfg = run_config(quadratic_task(), Method::Cgad, DelaySchedule::uniform_default(), 4, 512);
    let r = run_experiment(&cfg).unwrap();
    let t = &r.theory;
    let bound = t.bound.as_ref().map_or("n/a".to_string(), |b| format!("{:.4} <= {:.4}: {}", b.lhs, b.rhs, b.holds));
    (
        t.step_bound_violations == 0 && t.step_bound_checked > 1000,
        format!(
            "{} violations over {} steps; rho <= 1 on {:.2}% (max rho {:.4}); rate bound {bound}",
            t.step_bound_violations,
            t.step_bound_checked,
            100.0 * t.rho_le_one_fraction.unwrap_or(0.0),
            t.rho_max.unwrap_or(f64::NAN)
        ),
    )
}

fn criterion_5() -> (bool, String) {
    let mut worst = [0.0f64; 2];
    for (slot, spec) in [quadratic_task(), mlp_task()].into_iter().enumerate() {
        let obj = spec.build();
        for draw in 0..20u64 {
            let mut rng = stream_rng(5, "acceptance-fd", &[slot as u64, draw]);
            let params = obj.init_params(&mut rng);
            let batch = obj.sample(&mut rng, obj.batch_size());
            let r = finite_diff_check(&obj, &params, &batch, 1.0).unwrap();
            worst[slot] = worst[slot].max(r.max_rel_error);
        }
    }
    (
        worst[0] < 1e-8 && worst[1] < 1e-5,
        format!("quadratic max {:.2e} (< 1e-8), mlp max {:.2e} (< 1e-5)", worst[0], worst[1]),
    )
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn mlp_runs(method: Method, delay: DelaySchedule) -> Vec<RunResult> {
    (0..3u64)
        .map(|seed| run_experiment(&run_config(mlp_task(), method, delay.clone(), seed, 200)).unwrap())
        .collect()
}

fn losses(rs: &[RunResult]) -> String {
    rs.iter()
        .map(|r| format!("{:.4}{}", r.final_loss, if r.diverged { "(div)" } else { "" }))
        .collect::<Vec<_>>()
        .join(" ")
}

struct Baselines {
    cgad0: Vec<RunResult>,
    nest0: Vec<RunResult>,
}

fn criterion_6(base: &Baselines) -> (bool, String) {
    let tau16 = DelaySchedule::Fixed { tau: 16 };
    let cgad16 = mlp_runs(Method::Cgad, tau16.clone());
    let nest16 = mlp_runs(Method::Nesterov, tau16);
    let c0 = mean(&base.cgad0.iter().map(|r| r.final_loss).collect::<Vec<_>>());
    let n0 = mean(&base.nest0.iter().map(|r| r.final_loss).collect::<Vec<_>>());
    let nest_bad = nest16.iter().filter(|r| r.diverged || r.final_loss > 5.0 * n0).count();
    let cgad_ok = cgad16.iter().filter(|r| !r.diverged && r.final_loss <= 1.5 * c0).count();
    (
        nest_bad >= 2 && cgad_ok == 3,
        format!(
            "nesterov tau=0 mean {n0:.4}, tau=16 [{}] -> {nest_bad}/3 beyond 5x; cgad tau=0 mean {c0:.4}, tau=16 [{}] -> {cgad_ok}/3 within 1.5x",
            losses(&nest16),
            losses(&cgad16)
        ),
    )
}

fn criterion_7(base: &Baselines) -> (bool, String) {
    let uni = DelaySchedule::uniform_default();
    let cgad = mlp_runs(Method::Cgad, uni.clone());
    let nest = mlp_runs(Method::Nesterov, uni);
    let c0 = mean(&base.cgad0.iter().map(|r| r.final_loss).collect::<Vec<_>>());
    let n0 = mean(&base.nest0.iter().map(|r| r.final_loss).collect::<Vec<_>>());
    let cu = mean(&cgad.iter().map(|r| r.final_loss).collect::<Vec<_>>());
    let nu = mean(&nest.iter().map(|r| r.final_loss).collect::<Vec<_>>());
    let nest_bad = nu > 5.0 * n0 || nest.iter().any(|r| r.diverged);
    (
        cu <= 1.5 * c0 && nest_bad,
        format!(
            "cgad uniform mean {cu:.4} = {:.2}x its tau=0 mean (need <= 1.5x); nesterov uniform mean {nu:.4} = {:.1}x (need > 5x)",
            cu / c0,
            nu / n0
        ),
    )
}

fn criterion_8() -> (bool, String) {
    let inputs = TheoryInputs {
        smoothness: 1.0,
        grad_bound: 1.0,
        sigma2: 1.0,
        c: 1.0,
        horizon: 100,
        f_gap: 1.0,
    };
    let t = bound_terms(&inputs, 0.2).unwrap();
    let expected = [0.1, 0.05, 1.0 / (0.2 * E * 10.0)];
    let got = [t.optimization, t.noise, t.staleness];
    let mut ok = got.iter().zip(&expected).all(|(g, e)| (g - e).abs() <= 1e-12);
    let t4 = bound_terms(&TheoryInputs { horizon: 400, ..inputs }, 0.2).unwrap();
    let got4 = [t4.optimization, t4.noise, t4.staleness];
    ok &= got4.iter().zip(&got).all(|(a, b)| (a - b / 2.0).abs() <= 1e-12);
    (ok, format!("terms {:.12} {:.12} {:.12}; 4T halves each", got[0], got[1], got[2]))
}

fn criterion_9() -> (bool, String) {
    let mut rng = stream_rng(9, "acceptance-quant", &[]);
    let mut ok = true;
    for _ in 0..10_000 {
        let len = rng.random_range(1..32usize);
        let mag = 10f64.powf(rng.random_range(-8.0..4.0));
        let g: Vec<f64> = (0..len).map(|_| mag * rng.random_range(-1.0..1.0)).collect();
        let frag = [0..len];
        let q = quantize_payload(&g, &frag);
        let d = dequantize_payload(&q, &frag);
        let max_abs = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let scale = max_abs / 127.0;
        for (x, y) in g.iter().zip(&d) {
            ok &= (x - y).abs() <= scale / 2.0 + 1e-15;
            if x.abs() == max_abs {
                ok &= x == y;
            }
        }
    }
    let zeros = vec![0.0; 7];
    let q = quantize_payload(&zeros, &[0..7]);
    ok &= dequantize_payload(&q, &[0..7]) == zeros && q.codes.iter().all(|&c| c == 0);
    (ok, "10000 fragments within scale/2; zero and endpoint cases exact".into())
}

fn criterion_10() -> (bool, String, Summary) {
    let tau8 = DelaySchedule::Fixed { tau: 8 };
    let mut results = Vec::new();
    for placement in [GatePlacement::Before, GatePlacement::After] {
        for seed in 0..3u64 {
            let mut cfg: RunConfig = run_config(mlp_task(), Method::Cgad, tau8.clone(), seed, 200);
            cfg.outer.gate_placement = Some(placement);
            results.push(run_experiment(&cfg).unwrap());
        }
    }
    let summary = summarize_results(&results, &[]);
    let ok = results.iter().all(|r| !r.diverged) && summary.rows.len() == 2;
    let m: Vec<f64> = summary.rows.iter().map(|r| r.mean_final_loss.unwrap_or(f64::NAN)).collect();
    (ok, format!("before {:.4}, after {:.4}; gap {:.2e}", m[0], m[1], (m[0] - m[1]).abs()), summary)
}

fn main() {
    let mut lines = vec![
        timed(1, 1, criterion_1),
        timed(2, 10, criterion_2),
        timed(3, 60, criterion_3),
        timed(4, 30, criterion_4),
        timed(5, 30, criterion_5),
    ];
    let start = Instant::now();
    let base = Baselines {
        cgad0: mlp_runs(Method::Cgad, DelaySchedule::Fixed { tau: 0 }),
        nest0: mlp_runs(Method::Nesterov, DelaySchedule::Fixed { tau: 0 }),
    };
    let shared = start.elapsed();
    let mut l6 = timed(6, 600, || criterion_6(&base));
    l6.elapsed += shared;
    l6.passed &= l6.elapsed < l6.budget;
    lines.push(l6);
    lines.push(timed(7, 300, || criterion_7(&base)));
    lines.push(timed(8, 1, criterion_8));
    lines.push(timed(9, 5, criterion_9));
    let mut table = String::new();
    lines.push(timed(10, 600, || {
        let (ok, detail, summary) = criterion_10();
        table = summary.to_table();
        (ok, detail)
    }));

    println!();
    let mut unexpected = 0;
    for l in &lines {
        let known = KNOWN_FAILURES.iter().find(|(id, _)| *id == l.id);
        let status = match (l.passed, known) {
            (true, _) => "PASS",
            (false, Some(_)) => "FAIL (known)",
            (false, None) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!(
            "criterion {:>2}: {status}  {}  [{:.2}s of {}s]",
            l.id,
            l.detail,
            l.elapsed.as_secs_f64(),
            l.budget.as_secs()
        );
        if let (false, Some((_, why))) = (l.passed, known) {
            println!("              {why}");
        }
        if l.passed && known.is_some() {
            println!("              listed as a known failure but passed; update KNOWN_FAILURES");
        }
    }
    println!("\ngate placement summary (mlp, tau=8, 3 seeds):\n{table}");
    let passed = lines.iter().filter(|l| l.passed).count();
    println!("acceptance: {passed}/{} criteria passed, {unexpected} unexpected failures", lines.len());
    if unexpected > 0 {
        std::process::exit(1);
    }
}
