use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use triad_core::diagnostics::{summarize, OrderingStatus, SweepSummary, PERCENTILES};
use triad_core::runner::{
    load_sweep, out_dir_from_env, run_experiment, run_sweep, threads_from_env, tvr_trace, TvrFamily, TvrTraceConfig,
};
use triad_core::spectral::{catalogue, StabilityProblem, TvrWeighting};
use triad_core::{Error, ExperimentConfig, SweepSpec, Verdict};

use crate::svg;

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_DIVERGENT: u8 = 3;
pub const EXIT_MARGINAL: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "triad", version, about = "Deadly-triad dynamics lab: TD divergence experiments")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Expected-update trace on the two-state example. Exit status encodes
    /// the linear stability verdict: 0 convergent, 3 divergent, 4 marginal.
    Tvr(TvrArgs),
    /// Stability verdict of the expected-update operator as JSON.
    Spectral(SpectralArgs),
    /// Train one agent from a JSON experiment config.
    Run(RunArgs),
    /// Run a factorial sweep from a JSON sweep config.
    Sweep(SweepArgs),
    /// Recompute summary.json for a sweep directory.
    Summarize(SummarizeArgs),
    /// Render SVG charts from a summary.json.
    Plot(PlotArgs),
}

fn kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
struct TvrArgs {
    #[arg(long)]
    gamma: f64,
    /// s1-only, equal or on-policy
    #[arg(long, default_value = "s1-only", value_parser = kebab::<TvrWeighting>)]
    weighting: TvrWeighting,
    /// linear or factored-affine
    #[arg(long, default_value = "linear", value_parser = kebab::<TvrFamily>)]
    family: TvrFamily,
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    #[arg(long, default_value_t = 10_000)]
    updates: usize,
    #[arg(long, default_value_t = 1.0)]
    w0: f64,
    #[arg(long, default_value_t = 0.0)]
    u0: f64,
    /// Bootstrap from a copy of the weights refreshed every K updates.
    #[arg(long)]
    sync_period: Option<usize>,
    /// Output directory (default: $TRIAD_OUT_DIR or ./out/tvr).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SpectralArgs {
    /// JSON stability problem; without it the built-in catalogue is analysed.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Also write the verdict JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $TRIAD_OUT_DIR or ./out/run).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: $TRIAD_OUT_DIR or ./out/<sweep name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: $TRIAD_THREADS or all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    /// Sweep output directory.
    dir: PathBuf,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    summary: PathBuf,
    /// Output directory (default: next to the summary).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// 1 for bad input, 2 for failures while running.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Io(_) | Error::NonFinite | Error::Singular | Error::Csv(_)) => EXIT_RUNTIME,
        Some(_) => EXIT_VALIDATION,
        None if e.downcast_ref::<serde_json::Error>().is_some() => EXIT_VALIDATION,
        None => EXIT_RUNTIME,
    }
}

pub fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Tvr(a) => cmd_tvr(a),
        Command::Spectral(a) => cmd_spectral(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::from).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(Error::from).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    fs::write(path, bytes).map_err(Error::from).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    outln!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_tvr(a: TvrArgs) -> Result<u8> {
    let cfg = TvrTraceConfig {
        gamma: a.gamma,
        weighting: a.weighting,
        family: a.family,
        step: a.step,
        updates: a.updates,
        w0: a.w0,
        u0: a.u0,
        sync_period: a.sync_period,
    };
    let trace = tvr_trace(&cfg)?;
    let out = a.out.unwrap_or_else(|| out_dir_from_env(Path::new("out/tvr")));

    let mut csv = String::from("update,w,u,v_s1,v_s2\n");
    for r in &trace.rows {
        csv.push_str(&format!("{},{},{},{},{}\n", r.update, r.w, r.u, r.v1, r.v2));
    }
    write_file(&out.join("trace.csv"), csv.as_bytes())?;

    let series = [("|v(s1)|", 0), ("|v(s2)|", 1)].map(|(name, i)| svg::Series {
        name: name.into(),
        points: trace.rows.iter().map(|r| (r.update as f64, if i == 0 { r.v1.abs() } else { r.v2.abs() })).collect(),
        band: vec![],
    });
    let title = format!("{} family, {} weighting, gamma {}", cfg.family.label(), cfg.weighting.label(), cfg.gamma);
    write_file(&out.join("trace.svg"), svg::line_chart(&title, "learning updates", "|value| (log)", true, &series).as_bytes())?;

    let last = trace.final_row();
    let report = json!({
        "config": cfg,
        "verdict": trace.report.verdict,
        "max_real_part": trace.report.max_real_part,
        "step_spectral_radius": trace.report.step_spectral_radius,
        "updates_run": last.update,
        "overflowed": trace.overflowed,
        "final": last,
        "peak_abs_value": trace.peak_value(),
    });
    write_json(&out.join("verdict.json"), &report)?;
    print_json(&report)?;
    Ok(match trace.report.verdict {
        Verdict::Convergent => 0,
        Verdict::Divergent => EXIT_DIVERGENT,
        Verdict::Marginal => EXIT_MARGINAL,
    })
}

fn cmd_spectral(a: SpectralArgs) -> Result<u8> {
    let problems: Vec<StabilityProblem> = match &a.problem {
        Some(path) => vec![read_json(path)?],
        None => catalogue()?,
    };
    let mut reports = Vec::with_capacity(problems.len());
    for p in &problems {
        reports.push(json!({ "name": p.name, "report": p.classify()? }));
    }
    let value = if a.problem.is_some() { reports.remove(0) } else { json!(reports) };
    if let Some(out) = &a.out {
        write_json(out, &value)?;
    }
    print_json(&value)?;
    Ok(0)
}

fn cmd_run(a: RunArgs) -> Result<u8> {
    let mut cfg: ExperimentConfig = read_json(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let out_dir = a.out.unwrap_or_else(|| out_dir_from_env(Path::new("out/run")));
    let outcome = run_experiment(&cfg)?;
    let hash = cfg.config_hash();
    let mut csv = Vec::new();
    outcome.metrics.write_csv("run", &hash, &mut csv)?;
    write_file(&out_dir.join("run.csv"), &csv)?;
    let report = json!({
        "config_hash": hash,
        "seed": cfg.seed,
        "agent_steps": outcome.agent_steps,
        "learn_steps": outcome.learn_steps,
        "episodes": outcome.episodes,
        "soft_diverged": outcome.metrics.any_soft(),
        "hard_diverged": outcome.hard_diverged,
        "max_abs_q": finite_or_null(outcome.metrics.max_abs_q()),
        "threshold": outcome.metrics.threshold(),
    });
    write_json(&out_dir.join("outcome.json"), &report)?;
    print_json(&report)?;
    Ok(0)
}

fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        serde_json::Value::Null
    }
}

fn print_orderings(summary: &SweepSummary) {
    outln!(
        "runs: {} ({} failed); soft-divergent overall {}/{}",
        summary.total_runs, summary.failed_runs, summary.overall.soft_divergent, summary.overall.runs
    );
    for o in &summary.orderings {
        let status = match o.status {
            OrderingStatus::Holds => "holds",
            OrderingStatus::Deviation if o.significant_deviation => "DEVIATION (significant)",
            OrderingStatus::Deviation => "deviation",
            OrderingStatus::NotApplicable => "n/a",
        };
        outln!(
            "{:<15} {:<24} lhs {:.3} [{:.3}, {:.3}] n={}  rhs {:.3} [{:.3}, {:.3}] n={}  diff {:+.3} [{:+.3}, {:+.3}]",
            o.name,
            status,
            o.lhs.fraction,
            o.lhs.ci_low,
            o.lhs.ci_high,
            o.lhs.runs,
            o.rhs.fraction,
            o.rhs.ci_low,
            o.rhs.ci_high,
            o.rhs.runs,
            o.difference,
            o.difference_ci.0,
            o.difference_ci.1
        );
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<u8> {
    let text = fs::read_to_string(&a.config).map_err(Error::from).with_context(|| format!("reading {}", a.config.display()))?;
    let spec = SweepSpec::from_json(&text)?;
    let threads = match a.threads {
        Some(0) => return Err(Error::InvalidConfig("--threads must be positive".into()).into()),
        Some(n) => Some(n),
        None => threads_from_env()?,
    };
    let out = a.out.unwrap_or_else(|| out_dir_from_env(&Path::new("out").join(&spec.name)));
    let report = run_sweep(&spec, &out, threads)?;
    outln!("wrote {} runs to {}", report.records.len(), out.display());
    print_orderings(&report.summary);
    Ok(0)
}

fn cmd_summarize(a: SummarizeArgs) -> Result<u8> {
    let (_, records) = load_sweep(&a.dir)?;
    let summary = summarize(&records)?;
    write_json(&a.dir.join("summary.json"), &summary)?;
    print_orderings(&summary);
    Ok(0)
}

fn cell_name(labels: &std::collections::BTreeMap<String, String>) -> String {
    ["bootstrap", "n", "alpha", "beta", "approximator", "env"]
        .iter()
        .filter_map(|k| labels.get(*k).map(|v| format!("{k}={v}")))
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_plot(a: PlotArgs) -> Result<u8> {
    let summary: SweepSummary = read_json(&a.summary)?;
    let out = match a.out {
        Some(p) => p,
        None => a.summary.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let mut rules: Vec<String> = summary.cells.iter().filter_map(|c| c.labels.get("bootstrap").cloned()).collect();
    rules.sort();
    rules.dedup();
    let group_of = |labels: &std::collections::BTreeMap<String, String>| {
        labels.get("bootstrap").and_then(|b| rules.iter().position(|r| r == b)).unwrap_or(0)
    };

    let bars: Vec<svg::Bar> = summary
        .cells
        .iter()
        .map(|c| svg::Bar {
            label: cell_name(&c.labels),
            value: c.stat.fraction,
            lo: c.stat.ci_low,
            hi: c.stat.ci_high,
            group: group_of(&c.labels),
        })
        .collect();
    let fraction = svg::bar_chart("Soft-divergence fraction per cell (95% Wilson)", "fraction of runs", &bars, &rules);
    write_file(&out.join("fraction-bars.svg"), fraction.as_bytes())?;

    let (p25, p50, p75) = (1, 2, 3);
    debug_assert_eq!(PERCENTILES[p50], 50.0);
    let series: Vec<svg::Series> = summary
        .cells
        .iter()
        .map(|c| svg::Series {
            name: cell_name(&c.labels),
            points: c.bands.iter().filter_map(|b| Some((b.frame_end as f64, b.values[p50]?))).collect(),
            band: c
                .bands
                .iter()
                .filter_map(|b| Some((b.frame_end as f64, b.values[p25]?, b.values[p75]?)))
                .collect(),
        })
        .collect();
    let bands = svg::line_chart("Max |Q| per interval: median and 25-75% band", "frames", "max |Q| (log)", true, &series);
    write_file(&out.join("percentile-bands.svg"), bands.as_bytes())?;

    let points: Vec<svg::Point> = summary
        .runs
        .iter()
        .filter_map(|r| Some(svg::Point { x: r.median_max_abs_q?, y: r.mean_return?, group: group_of(&r.labels) }))
        .collect();
    let scatter = svg::scatter_chart("Mean return vs median max |Q|", "median max |Q| (log)", "mean episode return", true, &points, &rules);
    write_file(&out.join("score-vs-maxq.svg"), scatter.as_bytes())?;

    outln!("wrote fraction-bars.svg, percentile-bands.svg, score-vs-maxq.svg to {}", out.display());
    Ok(0)
}
