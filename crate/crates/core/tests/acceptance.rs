//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are always printed.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use sha2::{Digest, Sha256};

use triad_core::approx::{sync_target, Approximator, ApproximatorKind, Capacity, OptimizerSpec};
use triad_core::diagnostics::OrderingStatus;
use triad_core::mdp::{make_tvr, value_iteration, FeatureMap, GridworldConfig, Policy};
use triad_core::replay::{PrioritizedBuffer, ReplayConfig};
use triad_core::runner::{growth_time, run_experiment, run_sweep, tvr_trace, EnvSpec, TvrFamily, TvrTraceConfig};
use triad_core::spectral::{simulate_expected, simulate_target_network, tvr_problem, TvrWeighting};
use triad_core::targets::bootstrap_value;
use triad_core::{BootstrapKind, ExperimentConfig, SweepSpec, Verdict};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if $cond {
        } else {
            return Err(format!($($msg)*));
        }
    };
}

fn linear_trace(gamma: f64, updates: usize) -> TvrTraceConfig {
    TvrTraceConfig { updates, ..TvrTraceConfig::new(gamma, TvrWeighting::S1Only, TvrFamily::Linear) }
}

fn tvr_divergence() -> Outcome {
    let start = Instant::now();
    let trace = tvr_trace(&linear_trace(0.99, 2000)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mut worst: f64 = 0.0;
    for r in &trace.rows {
        let expect = 1.0098f64.powi(r.update as i32);
        worst = worst.max(((r.w - expect) / expect).abs());
    }
    ensure!(trace.rows.len() == 2001, "trace stopped at {}", trace.rows.len() - 1);
    ensure!(worst <= 1e-9, "max relative error {worst:e} > 1e-9");
    // smallest t with 1.0098^t > 1e6
    let closed = (1e6f64.ln() / 1.0098f64.ln()).ceil() as usize;
    let crossed = trace.rows.iter().find(|r| r.w > 1e6).map(|r| r.update);
    ensure!(crossed == Some(closed), "crossed 1e6 at {crossed:?}, closed form {closed}");
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("max rel err {worst:.1e}, w > 1e6 first at t={closed}, {:.1} ms", elapsed.as_secs_f64() * 1e3))
}

fn tvr_contraction() -> Outcome {
    let trace = tvr_trace(&linear_trace(0.4, 10_000)).map_err(|e| e.to_string())?;
    let w = trace.final_row().w;
    let closed = 0.998f64.powi(10_000);
    ensure!(w.abs() < 1e-6, "|w| = {w:e}");
    ensure!(((w - closed) / closed).abs() < 1e-9, "w = {w:e}, closed form {closed:e}");
    Ok(format!("|w_10000| = {:.3e} (0.998^10000 = {closed:.3e})", w.abs()))
}

fn equal_weighting_boundary() -> Outcome {
    let mut notes = Vec::new();
    let cells = [
        (TvrWeighting::S1Only, 0.99, 2.0 * 0.99 - 1.0, Verdict::Divergent),
        (TvrWeighting::S1Only, 0.4, 2.0 * 0.4 - 1.0, Verdict::Convergent),
        (TvrWeighting::Equal, 0.9, 6.0 * 0.9 - 5.0, Verdict::Divergent),
        (TvrWeighting::Equal, 0.8, 6.0 * 0.8 - 5.0, Verdict::Convergent),
    ];
    for (weighting, gamma, coef, expected) in cells {
        let problem = tvr_problem(gamma, weighting, 0.01).map_err(|e| e.to_string())?;
        let op = problem.operator().map_err(|e| e.to_string())?;
        let a = op.matrix()[(0, 0)];
        ensure!((a - coef).abs() < 1e-12, "{} γ={gamma}: coefficient {a} vs {coef}", weighting.label());
        let verdict = problem.classify().map_err(|e| e.to_string())?.verdict;
        ensure!(verdict == expected, "{} γ={gamma}: verdict {verdict:?}", weighting.label());
        let end = simulate_expected(&op, &[1.0], 0.01, 10_000)[0].abs();
        let simulated = if end > 1e6 {
            Verdict::Divergent
        } else if end < 1e-6 {
            Verdict::Convergent
        } else {
            Verdict::Marginal
        };
        ensure!(simulated == verdict, "{} γ={gamma}: simulation ends at {end:e}", weighting.label());
        notes.push(format!("{} γ={gamma}: {a:+.2} {verdict:?}", weighting.label()));
    }
    Ok(notes.join("; "))
}

fn factored_affine_rise() -> Outcome {
    let cfg = TvrTraceConfig::new(0.99, TvrWeighting::Equal, TvrFamily::FactoredAffine);
    let trace = tvr_trace(&cfg).map_err(|e| e.to_string())?;
    let r0 = trace.rows[0];
    let initial = r0.v1.abs().max(r0.v2.abs());
    let peak = trace.peak_value();
    let last = trace.final_row();
    let end = last.v1.abs().max(last.v2.abs());
    ensure!(!trace.overflowed, "trace overflowed");
    ensure!(peak > 2.0 * initial, "peak {peak} not above 2× initial {initial}");
    ensure!(end < 1e-2, "final max |v| {end:e}");
    Ok(format!(
        "step {}, {} updates: |v| {initial} → peak {peak:.1} → {end:.1e}; linear verdict {:?}",
        cfg.step, cfg.updates, trace.report.verdict
    ))
}

fn four_targets_coincide() -> Outcome {
    let mut r = common::rng(55);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (n_states, dim, n_actions) = (r.gen_range(1..6), r.gen_range(1..5), r.gen_range(2..9));
        let rows = (0..n_states).map(|_| (0..dim).map(|_| r.gen_range(-3.0..3.0)).collect()).collect();
        let kind = if r.gen_bool(0.5) { ApproximatorKind::Linear } else { ApproximatorKind::Mlp { hidden: vec![6] } };
        let approx = Approximator::new(kind, FeatureMap::new(rows).unwrap(), n_actions).unwrap();
        let mut online = approx.init_params(&mut r);
        online.iter_mut().for_each(|x| *x += r.gen_range(-2.0..2.0));
        let target = sync_target(&online);
        let s = r.gen_range(0..n_states);
        let (qo, qt) = (approx.values(&online, s).unwrap(), approx.values(&target, s).unwrap());
        let values: Vec<f64> = BootstrapKind::ALL.iter().map(|&k| bootstrap_value(k, &qo, &qt)).collect();
        let spread = values.iter().cloned().fold(f64::MIN, f64::max) - values.iter().cloned().fold(f64::MAX, f64::min);
        worst = worst.max(spread);
    }
    ensure!(worst <= 1e-12, "max spread {worst:e}");
    Ok(format!("1000 tables, max spread across rules {worst:e}"))
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    for (i, cap) in Capacity::ALL.into_iter().enumerate() {
        let err = common::mlp_gradient_error(cap, 200 + i as u64);
        ensure!(err < 1e-4, "{}: relative error {err:e}", cap.label());
        notes.push(format!("{}={err:.1e}", cap.width()));
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("rel err by width {}, {:.1} s", notes.join(" "), elapsed.as_secs_f64()))
}

fn mean_weights(floor: f64) -> Vec<f64> {
    let cfg = ReplayConfig { min_fill: 1.0, priority_floor: floor, ..ReplayConfig::new(2, 1.0, 1.0) };
    let mut buf = PrioritizedBuffer::new(cfg).unwrap();
    buf.push(0usize, 1.0);
    buf.push(1usize, 3.0);
    let mut r = common::rng(1);
    let mut seen = [None, None];
    for _ in 0..100 {
        let b = buf.sample(2, &mut r).unwrap();
        for (&&k, &w) in b.entries.iter().zip(&b.weights) {
            seen[k] = Some(w);
        }
    }
    seen.iter().map(|w| w.expect("both entries drawn")).collect()
}

fn prioritized_fidelity() -> Outcome {
    let tds = [0.0, 0.1, 0.5, 1.0, 2.0, 4.0];
    let mut worst: f64 = 0.0;
    for (i, alpha) in [0.0, 0.5, 1.0, 2.0].into_iter().enumerate() {
        let freq = common::empirical_frequencies(&tds, alpha, 1_000_000, 90 + i as u64);
        let p = common::analytic_probabilities(&tds, alpha);
        let dev = freq.iter().zip(&p).map(|(f, p)| (f - p).abs()).fold(0.0, f64::max);
        ensure!(dev < 0.01, "alpha {alpha}: max deviation {dev}");
        worst = worst.max(dev);
    }
    let mut buf = PrioritizedBuffer::new(ReplayConfig { min_fill: 0.5, ..ReplayConfig::new(50, 2.0, 0.0) }).unwrap();
    let mut r = common::rng(3);
    for i in 0..50 {
        buf.push(i, r.gen_range(-4.0..4.0));
    }
    for _ in 0..200 {
        let b = buf.sample(32, &mut r).unwrap();
        ensure!(b.weights.iter().all(|&w| w == 1.0), "beta=0 produced a weight other than 1");
    }
    let expect = [2.0, 2.0 / 3.0];
    let exact = mean_weights(1e-12);
    let floored = mean_weights(1e-6);
    for k in 0..2 {
        ensure!((exact[k] - expect[k]).abs() < 1e-10, "worked example weights {exact:?}");
        ensure!((floored[k] - expect[k]).abs() < 1e-5, "worked example with default floor {floored:?}");
    }
    Ok(format!(
        "max |freq - p| {worst:.4} over 1e6 draws; beta=0 weights exactly 1; worked example {:.6?}",
        floored
    ))
}

fn tabular_config(width: usize, height: usize, frames: u64) -> ExperimentConfig {
    let mut grid = GridworldConfig::new(width, height, 1.0, 0.0, 0.9);
    grid.random_start = true;
    ExperimentConfig {
        env: EnvSpec::Gridworld(grid),
        approximator: ApproximatorKind::Tabular,
        bootstrap: BootstrapKind::Q,
        n: 1,
        epsilon: 1.0,
        optimizer: OptimizerSpec::sgd(0.5),
        total_frames: frames,
        interval_length: 1_000,
        replay_capacity: 10_000,
        learn_every: 1,
        target_sync_period: 1,
        seed: 21,
        ..Default::default()
    }
}

fn tabular_control() -> Outcome {
    let mut notes = Vec::new();
    for (name, cfg) in [("corridor 1x2", tabular_config(1, 2, 5_000)), ("gridworld 5x5", tabular_config(5, 5, 50_000))] {
        let out = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let env = cfg.env.build().unwrap();
        let q_star = value_iteration(&env.oracle_mdp(), 1e-13, 100_000);
        let approx = Approximator::new(cfg.approximator.clone(), env.features().clone(), env.n_actions()).unwrap();
        let mut worst: f64 = 0.0;
        for (s, q_row) in q_star.iter().enumerate() {
            let q = approx.values(&out.params, s).unwrap();
            worst = q.iter().zip(q_row).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        }
        ensure!(worst < 1e-3, "{name}: max |q - q*| {worst:e}");
        notes.push(format!("{name} max |q - q*| {worst:.1e}"));
    }
    Ok(notes.join("; "))
}

fn triad_sweep() -> Outcome {
    let text = include_str!("../../../configs/triad-gridworld.json");
    let spec = SweepSpec::from_json(text).map_err(|e| e.to_string())?;
    ensure!(spec.replications >= 10, "only {} seeds per cell", spec.replications);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = run_sweep(&spec, dir.path(), None).map_err(|e| e.to_string())?;
    let summary = report.summary;
    ensure!(dir.path().join("summary.json").is_file(), "summary.json missing");
    ensure!(summary.failed_runs == 0, "{} runs failed", summary.failed_runs);
    ensure!(summary.cells.iter().all(|c| c.stat.runs >= 10), "a cell has fewer than 10 completed runs");
    let mut notes = Vec::new();
    for o in &summary.orderings {
        ensure!(o.status != OrderingStatus::NotApplicable, "{} not evaluated", o.name);
        ensure!(o.lhs.ci_low <= o.lhs.fraction && o.lhs.fraction <= o.lhs.ci_high, "{}: CI malformed", o.name);
        let status = match o.status {
            OrderingStatus::Holds => "holds".to_string(),
            _ => format!("deviation reported (diff {:+.2} CI [{:+.2}, {:+.2}])", o.difference, o.difference_ci.0, o.difference_ci.1),
        };
        notes.push(format!(
            "{} {status}: {:.2} [{:.2},{:.2}] vs {:.2} [{:.2},{:.2}]",
            o.name, o.lhs.fraction, o.lhs.ci_low, o.lhs.ci_high, o.rhs.fraction, o.rhs.ci_low, o.rhs.ci_high
        ));
    }
    Ok(format!("{} runs; {}", summary.total_runs, notes.join("; ")))
}

fn target_network_slowdown() -> Outcome {
    let tvr = make_tvr(0.99, false).map_err(|e| e.to_string())?;
    let policy = Policy::uniform(2, 1);
    let mut times = Vec::new();
    for k in [10usize, 100] {
        let trace = tvr_trace(&TvrTraceConfig { sync_period: Some(k), ..linear_trace(0.99, 10_000) }).map_err(|e| e.to_string())?;
        let t = growth_time(&trace, 10.0).ok_or(format!("K={k}: no 10x growth within 1e4 steps"))?;
        // cross-check with the matrix simulation and the per-period closed form
        let norms = simulate_target_network(&tvr.mdp, &policy, &[1.0, 0.0], &tvr.features, &[1.0], 0.01, k, 10_000)
            .map_err(|e| e.to_string())?;
        let t_matrix = norms.iter().position(|&x| x >= 10.0);
        ensure!(t_matrix == Some(t), "K={k}: trace says {t}, matrix simulation {t_matrix:?}");
        let per_period = 1.0 + (2.0 * 0.99 - 1.0) * (1.0 - 0.99f64.powi(k as i32));
        let periods = 10_000 / k;
        let closed = per_period.powi(periods as i32);
        let w = trace.rows[periods * k].w;
        ensure!(((w - closed) / closed).abs() < 1e-8, "K={k}: w after {periods} periods {w} vs {closed}");
        times.push((k, t));
    }
    ensure!(times[0].1 < times[1].1, "larger sync period reached 10x first: {times:?}");
    Ok(times.iter().map(|(k, t)| format!("K={k}: 10x at step {t}")).collect::<Vec<_>>().join(", "))
}

fn file_hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let digest = Sha256::digest(fs::read(&path).unwrap());
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(path.strip_prefix(dir).unwrap().display().to_string(), hex);
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let cfg = ExperimentConfig {
        env: EnvSpec::Gridworld(GridworldConfig::new(4, 4, 1.0, 0.0, 0.99)),
        alpha: 1.0,
        beta: 0.4,
        n: 3,
        bootstrap: BootstrapKind::DoubleQ,
        total_frames: 5_000,
        interval_length: 1_000,
        replay_capacity: 2_000,
        target_sync_period: 500,
        seed: 77,
        ..Default::default()
    };
    let digest = |c: &ExperimentConfig| -> Result<String, String> {
        let out = run_experiment(c).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        out.metrics.write_csv("run", &c.config_hash(), &mut buf).map_err(|e| e.to_string())?;
        Ok(Sha256::digest(&buf).iter().map(|b| format!("{b:02x}")).collect())
    };
    let (a, b) = (digest(&cfg)?, digest(&cfg)?);
    ensure!(a == b, "run metrics differ: {a} vs {b}");

    let spec = SweepSpec {
        name: "determinism".into(),
        replications: 2,
        base_seed: 3,
        envs: vec![],
        base: ExperimentConfig { total_frames: 2_000, ..cfg },
        axes: triad_core::runner::SweepAxes { alpha: Some(vec![0.0, 2.0]), ..Default::default() },
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_sweep(&spec, d1.path(), Some(1)).map_err(|e| e.to_string())?;
    run_sweep(&spec, d2.path(), Some(3)).map_err(|e| e.to_string())?;
    let (h1, h2) = (file_hashes(d1.path()), file_hashes(d2.path()));
    ensure!(h1 == h2, "sweep outputs differ between runs");
    Ok(format!("run sha256 {}…; {} sweep files hash-identical across thread counts", &a[..12], h1.len()))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("TVR divergence (s1-only, γ=0.99)", tvr_divergence),
        ("TVR contraction (γ=0.4)", tvr_contraction),
        ("equal-weighting boundary", equal_weighting_boundary),
        ("factored-affine rise then converge", factored_affine_rise),
        ("four bootstrap rules coincide after sync", four_targets_coincide),
        ("MLP gradient correctness", gradient_correctness),
        ("prioritized sampling fidelity", prioritized_fidelity),
        ("tabular control soundness", tabular_control),
        ("gridworld triad sweep orderings", triad_sweep),
        ("target-network slowdown", target_network_slowdown),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.2}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
