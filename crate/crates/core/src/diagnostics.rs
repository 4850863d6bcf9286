//! Interval statistics, soft/hard divergence flags and sweep summaries.
//!
//! A run is cut into fixed-length frame intervals. Each interval records the
//! largest `|q|` seen on minibatch states, episode returns completed inside
//! it and the mean loss. An interval is *soft-divergent* when its max `|q|`
//! exceeds `reward_bound / (1 − γ)`, the largest value any policy can
//! realise under clipped rewards, and *hard-divergent* when a non-finite
//! value appeared.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PERCENTILES: [f64; 5] = [10.0, 25.0, 50.0, 75.0, 90.0];

/// `reward_bound / (1 − γ)`.
pub fn soft_divergence_threshold(gamma: f64, reward_bound: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::config(format!("discount {gamma} outside [0, 1)")));
    }
    if reward_bound <= 0.0 || !reward_bound.is_finite() {
        return Err(Error::config("reward bound must be positive"));
    }
    Ok(reward_bound / (1.0 - gamma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalStats {
    pub frame_start: u64,
    pub frame_end: u64,
    pub max_abs_q: f64,
    pub mean_return: Option<f64>,
    pub p50_return: Option<f64>,
    pub loss_mean: Option<f64>,
    pub soft_div: bool,
    pub hard_div: bool,
}

impl IntervalStats {
    fn open(frame_start: u64, frame_end: u64) -> Self {
        IntervalStats {
            frame_start,
            frame_end,
            max_abs_q: 0.0,
            mean_return: None,
            p50_return: None,
            loss_mean: None,
            soft_div: false,
            hard_div: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Accumulator {
    max_abs_q: f64,
    returns: Vec<f64>,
    loss_sum: f64,
    loss_count: u64,
    hard: bool,
}

/// Time series of interval statistics for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    interval_length: u64,
    threshold: f64,
    intervals: Vec<IntervalStats>,
    current_start: u64,
    acc: Accumulator,
    last_frame: u64,
    hard_diverged: bool,
}

impl RunMetrics {
    pub fn new(interval_length: u64, threshold: f64) -> Result<Self> {
        if interval_length == 0 {
            return Err(Error::config("interval length must be positive"));
        }
        Ok(RunMetrics {
            interval_length,
            threshold,
            intervals: Vec::new(),
            current_start: 0,
            acc: Accumulator::default(),
            last_frame: 0,
            hard_diverged: false,
        })
    }

    /// Rebuild from closed intervals, e.g. read back from CSV.
    pub fn from_intervals(interval_length: u64, threshold: f64, intervals: Vec<IntervalStats>) -> Result<Self> {
        let mut m = RunMetrics::new(interval_length, threshold)?;
        m.hard_diverged = intervals.iter().any(|i| i.hard_div);
        m.current_start = intervals.last().map_or(0, |i| i.frame_end);
        m.last_frame = m.current_start;
        m.intervals = intervals;
        Ok(m)
    }

    pub fn interval_length(&self) -> u64 {
        self.interval_length
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn intervals(&self) -> &[IntervalStats] {
        &self.intervals
    }

    pub fn is_hard_diverged(&self) -> bool {
        self.hard_diverged || self.acc.hard
    }

    pub fn any_soft(&self) -> bool {
        self.intervals.iter().any(|i| i.soft_div) || self.current_soft()
    }

    fn current_soft(&self) -> bool {
        self.acc.hard || self.acc.max_abs_q > self.threshold
    }

    /// Largest `|q|` over the closed intervals.
    pub fn max_abs_q(&self) -> f64 {
        self.intervals.iter().map(|i| i.max_abs_q).fold(0.0, f64::max)
    }

    /// Record observations made at `frame`. Frames must not decrease.
    ///
    /// Intervals are `[k L, (k + 1) L)`; reaching a new interval closes the
    /// current one (and any skipped empty ones).
    pub fn record(&mut self, frame: u64, q_values: &[f64], episode_returns: &[f64], loss: Option<f64>) {
        debug_assert!(frame >= self.last_frame, "frames must be monotone");
        self.last_frame = frame.max(self.last_frame);
        while frame >= self.current_start + self.interval_length {
            self.close(self.current_start + self.interval_length);
        }
        for &q in q_values {
            if q.is_finite() {
                self.acc.max_abs_q = self.acc.max_abs_q.max(q.abs());
            } else {
                self.acc.hard = true;
                self.acc.max_abs_q = f64::INFINITY;
            }
        }
        self.acc.returns.extend_from_slice(episode_returns);
        if let Some(l) = loss {
            if l.is_finite() {
                self.acc.loss_sum += l;
                self.acc.loss_count += 1;
            } else {
                self.acc.hard = true;
                self.acc.max_abs_q = f64::INFINITY;
            }
        }
    }

    fn close(&mut self, end: u64) {
        let acc = std::mem::take(&mut self.acc);
        let mut stats = IntervalStats::open(self.current_start, end);
        stats.max_abs_q = acc.max_abs_q;
        if !acc.returns.is_empty() {
            stats.mean_return = Some(acc.returns.iter().sum::<f64>() / acc.returns.len() as f64);
            let mut sorted = acc.returns.clone();
            sorted.sort_by(f64::total_cmp);
            stats.p50_return = percentile(&sorted, 50.0);
        }
        if acc.loss_count > 0 {
            stats.loss_mean = Some(acc.loss_sum / acc.loss_count as f64);
        }
        stats.hard_div = acc.hard || self.hard_diverged;
        stats.soft_div = stats.hard_div || stats.max_abs_q > self.threshold;
        if stats.hard_div {
            stats.max_abs_q = f64::INFINITY;
            self.hard_diverged = true;
        }
        self.intervals.push(stats);
        self.current_start = end;
    }

    /// Close the run at `total_frames`. After a hard divergence every
    /// remaining interval up to `total_frames` is recorded as diverged.
    pub fn finish(&mut self, total_frames: u64) {
        if self.is_hard_diverged() {
            while self.current_start < total_frames {
                let end = (self.current_start + self.interval_length).min(total_frames);
                self.close(end);
            }
        } else {
            while self.current_start + self.interval_length <= total_frames {
                self.close(self.current_start + self.interval_length);
            }
            let has_data = self.acc != Accumulator::default();
            if self.current_start < total_frames || has_data {
                self.close(total_frames.max(self.current_start + 1));
            }
        }
    }

    pub fn write_csv<W: Write>(&self, run_id: &str, config_hash: &str, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for i in &self.intervals {
            w.write_record([
                run_id.to_string(),
                config_hash.to_string(),
                i.frame_start.to_string(),
                i.frame_end.to_string(),
                i.max_abs_q.to_string(),
                opt(i.mean_return),
                opt(i.p50_return),
                opt(i.loss_mean),
                u8::from(i.soft_div).to_string(),
                u8::from(i.hard_div).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parse a metrics CSV; returns `(run_id, config_hash, intervals)`.
    pub fn read_csv<R: Read>(input: R) -> Result<(String, String, Vec<IntervalStats>)> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(Error::config(format!("unexpected metrics header {header:?}")));
        }
        let mut ids = (String::new(), String::new());
        let mut intervals = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let f = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| Error::config(format!("bad number {:?}", &rec[i])))
            };
            let o = |i: usize| -> Result<Option<f64>> { if rec[i].is_empty() { Ok(None) } else { f(i).map(Some) } };
            let u = |i: usize| -> Result<u64> {
                rec[i].parse().map_err(|_| Error::config(format!("bad frame {:?}", &rec[i])))
            };
            let b = |i: usize| -> Result<bool> {
                match &rec[i] {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(Error::config(format!("bad flag {other:?}"))),
                }
            };
            ids = (rec[0].to_string(), rec[1].to_string());
            intervals.push(IntervalStats {
                frame_start: u(2)?,
                frame_end: u(3)?,
                max_abs_q: f(4)?,
                mean_return: o(5)?,
                p50_return: o(6)?,
                loss_mean: o(7)?,
                soft_div: b(8)?,
                hard_div: b(9)?,
            });
        }
        Ok((ids.0, ids.1, intervals))
    }
}

pub const CSV_HEADER: [&str; 10] = [
    "run_id",
    "config_hash",
    "frame_start",
    "frame_end",
    "max_abs_q",
    "mean_return",
    "p50_return",
    "loss_mean",
    "soft_div",
    "hard_div",
];

/// Linear-interpolation percentile of an ascending slice.
pub fn percentile(sorted: &[f64], pct: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    let (a, b) = (sorted[lo], sorted[hi]);
    Some(if frac == 0.0 || a == b { a } else { a + (b - a) * frac })
}

/// Wilson score interval at 95% for `k` successes out of `n`.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Outcome of a run inside a sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status", content = "message")]
pub enum RunStatus {
    Completed,
    Failed(String),
}

/// One run with the labels that place it in the sweep grid.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run_id: String,
    pub config_hash: String,
    pub labels: BTreeMap<String, String>,
    pub seed: u64,
    pub status: RunStatus,
    pub metrics: Option<RunMetrics>,
}

impl RunRecord {
    fn completed(&self) -> Option<&RunMetrics> {
        match self.status {
            RunStatus::Completed => self.metrics.as_ref(),
            RunStatus::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub interval: usize,
    pub frame_end: u64,
    /// Percentiles of max `|q|` across runs, in [`PERCENTILES`] order.
    /// `None` marks a non-finite value.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub filter: BTreeMap<String, String>,
    pub runs: usize,
    pub soft_divergent: usize,
    pub fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl GroupStat {
    fn new(filter: BTreeMap<String, String>, runs: usize, soft: usize) -> Self {
        let (ci_low, ci_high) = wilson_interval(soft, runs);
        let fraction = if runs == 0 { 0.0 } else { soft as f64 / runs as f64 };
        GroupStat { filter, runs, soft_divergent: soft, fraction, ci_low, ci_high }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub config_hash: String,
    pub labels: BTreeMap<String, String>,
    pub failed: usize,
    pub hard_divergent: usize,
    pub stat: GroupStat,
    pub bands: Vec<BandPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSummary {
    pub axis: String,
    pub value: String,
    /// Restricted to one bootstrap rule, or across all rules when `None`.
    pub bootstrap: Option<String>,
    pub stat: GroupStat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderingStatus {
    Holds,
    Deviation,
    NotApplicable,
}

/// Check that the soft-divergence fraction of `lhs` is at most that of `rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub name: String,
    pub description: String,
    pub lhs: GroupStat,
    pub rhs: GroupStat,
    pub status: OrderingStatus,
    /// `lhs.fraction − rhs.fraction` with a 95% Newcombe interval.
    pub difference: f64,
    pub difference_ci: (f64, f64),
    /// The interval lies entirely above zero: a deviation that is unlikely to
    /// be seed noise.
    pub significant_deviation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPoint {
    pub run_id: String,
    pub config_hash: String,
    pub labels: BTreeMap<String, String>,
    pub failed: bool,
    pub soft_divergent: bool,
    pub hard_divergent: bool,
    pub max_abs_q: Option<f64>,
    pub median_max_abs_q: Option<f64>,
    pub mean_return: Option<f64>,
    pub final_mean_return: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub total_runs: usize,
    pub failed_runs: usize,
    pub overall: GroupStat,
    pub cells: Vec<CellSummary>,
    pub marginals: Vec<MarginalSummary>,
    pub orderings: Vec<OrderingCheck>,
    pub runs: Vec<RunPoint>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Numeric-aware label comparison so that "3" sorts before "10".
fn cmp_label(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

fn cmp_labels(a: &BTreeMap<String, String>, b: &BTreeMap<String, String>) -> Ordering {
    for ((ka, va), (kb, vb)) in a.iter().zip(b) {
        let o = ka.cmp(kb).then_with(|| cmp_label(va, vb));
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

fn matches(labels: &BTreeMap<String, String>, filter: &BTreeMap<String, String>) -> bool {
    filter.iter().all(|(k, v)| labels.get(k) == Some(v))
}

fn group(runs: &[&RunRecord], filter: BTreeMap<String, String>) -> GroupStat {
    let (mut n, mut soft) = (0, 0);
    for r in runs.iter().filter(|r| matches(&r.labels, &filter)) {
        if let Some(m) = r.completed() {
            n += 1;
            soft += usize::from(m.any_soft());
        }
    }
    GroupStat::new(filter, n, soft)
}

fn filter_of(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// Newcombe hybrid-score interval for a difference of two proportions.
fn difference_interval(a: &GroupStat, b: &GroupStat) -> (f64, f64) {
    let d = a.fraction - b.fraction;
    let lo = d - ((a.fraction - a.ci_low).powi(2) + (b.ci_high - b.fraction).powi(2)).sqrt();
    let hi = d + ((a.ci_high - a.fraction).powi(2) + (b.fraction - b.ci_low).powi(2)).sqrt();
    (lo, hi)
}

fn ordering(name: &str, description: &str, lhs: GroupStat, rhs: GroupStat) -> OrderingCheck {
    let difference = lhs.fraction - rhs.fraction;
    let difference_ci = difference_interval(&lhs, &rhs);
    let status = if lhs.runs == 0 || rhs.runs == 0 {
        OrderingStatus::NotApplicable
    } else if lhs.fraction <= rhs.fraction {
        OrderingStatus::Holds
    } else {
        OrderingStatus::Deviation
    };
    OrderingCheck {
        name: name.into(),
        description: description.into(),
        significant_deviation: status == OrderingStatus::Deviation && difference_ci.0 > 0.0,
        lhs,
        rhs,
        status,
        difference,
        difference_ci,
    }
}

/// The three orderings the sweep is expected to show.
pub fn standard_orderings(runs: &[&RunRecord]) -> Vec<OrderingCheck> {
    vec![
        ordering(
            "multi-step",
            "Q rule: fraction at n=10 is at most the fraction at n=1",
            group(runs, filter_of(&[("bootstrap", "q"), ("n", "10")])),
            group(runs, filter_of(&[("bootstrap", "q"), ("n", "1")])),
        ),
        ordering(
            "double-q",
            "n=1: double-Q fraction is at most the Q fraction",
            group(runs, filter_of(&[("bootstrap", "double-q"), ("n", "1")])),
            group(runs, filter_of(&[("bootstrap", "q"), ("n", "1")])),
        ),
        ordering(
            "prioritization",
            "uniform replay (alpha=0) fraction is at most the uncorrected alpha=2 fraction",
            group(runs, filter_of(&[("alpha", "0")])),
            group(runs, filter_of(&[("alpha", "2"), ("beta", "0")])),
        ),
    ]
}

fn run_point(r: &RunRecord) -> RunPoint {
    let m = r.completed();
    let (max_abs_q, median_max_abs_q, mean_return, final_mean_return) = match m {
        Some(m) => {
            let mut qs: Vec<f64> = m.intervals().iter().map(|i| i.max_abs_q).collect();
            qs.sort_by(f64::total_cmp);
            let returns: Vec<f64> = m.intervals().iter().filter_map(|i| i.mean_return).collect();
            (
                finite(m.max_abs_q()),
                percentile(&qs, 50.0).and_then(finite),
                (!returns.is_empty()).then(|| returns.iter().sum::<f64>() / returns.len() as f64),
                returns.last().copied(),
            )
        }
        None => (None, None, None, None),
    };
    RunPoint {
        run_id: r.run_id.clone(),
        config_hash: r.config_hash.clone(),
        labels: r.labels.clone(),
        failed: m.is_none(),
        soft_divergent: m.is_some_and(RunMetrics::any_soft),
        hard_divergent: m.is_some_and(RunMetrics::is_hard_diverged),
        max_abs_q,
        median_max_abs_q,
        mean_return,
        final_mean_return,
    }
}

fn bands(runs: &[&RunRecord]) -> Vec<BandPoint> {
    let metrics: Vec<&RunMetrics> = runs.iter().filter_map(|r| r.completed()).collect();
    let len = metrics.iter().map(|m| m.intervals().len()).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let mut qs: Vec<f64> = metrics.iter().filter_map(|m| m.intervals().get(i)).map(|s| s.max_abs_q).collect();
            qs.sort_by(f64::total_cmp);
            let frame_end = metrics
                .iter()
                .filter_map(|m| m.intervals().get(i))
                .map(|s| s.frame_end)
                .max()
                .unwrap_or(0);
            BandPoint {
                interval: i,
                frame_end,
                values: PERCENTILES.iter().map(|&p| percentile(&qs, p).and_then(finite)).collect(),
            }
        })
        .collect()
}

/// Aggregate a sweep: per-cell soft-divergence fractions with Wilson
/// intervals and max-|q| percentile bands, per-axis marginals (overall and per
/// bootstrap rule), the standard ordering checks and per-run points.
///
/// The result does not depend on the order of `runs`.
pub fn summarize(runs: &[RunRecord]) -> Result<SweepSummary> {
    if runs.is_empty() {
        return Err(Error::Empty("runs"));
    }
    let mut sorted: Vec<&RunRecord> = runs.iter().collect();
    sorted.sort_by(|a, b| a.run_id.cmp(&b.run_id).then_with(|| a.config_hash.cmp(&b.config_hash)));

    let mut by_cell: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in &sorted {
        by_cell.entry(r.config_hash.as_str()).or_default().push(r);
    }
    let mut cells: Vec<CellSummary> = by_cell
        .into_iter()
        .map(|(hash, rs)| {
            let labels = rs[0].labels.clone();
            let completed: Vec<&RunMetrics> = rs.iter().filter_map(|r| r.completed()).collect();
            let soft = completed.iter().filter(|m| m.any_soft()).count();
            CellSummary {
                config_hash: hash.to_string(),
                failed: rs.len() - completed.len(),
                hard_divergent: completed.iter().filter(|m| m.is_hard_diverged()).count(),
                stat: GroupStat::new(labels.clone(), completed.len(), soft),
                labels,
                bands: bands(&rs),
            }
        })
        .collect();
    cells.sort_by(|a, b| cmp_labels(&a.labels, &b.labels).then_with(|| a.config_hash.cmp(&b.config_hash)));

    let mut axes: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in &sorted {
        for (k, v) in &r.labels {
            let values = axes.entry(k.as_str()).or_default();
            if !values.contains(&v.as_str()) {
                values.push(v.as_str());
            }
        }
    }
    let bootstraps: Vec<&str> = axes.get("bootstrap").cloned().unwrap_or_default();
    let mut marginals = Vec::new();
    for (axis, values) in &mut axes {
        values.sort_by(|a, b| cmp_label(a, b));
        for value in values.iter() {
            let base = filter_of(&[(axis, value)]);
            marginals.push(MarginalSummary {
                axis: axis.to_string(),
                value: value.to_string(),
                bootstrap: None,
                stat: group(&sorted, base.clone()),
            });
            if *axis == "bootstrap" {
                continue;
            }
            let mut rules = bootstraps.clone();
            rules.sort_unstable();
            for rule in rules {
                let mut f = base.clone();
                f.insert("bootstrap".into(), rule.into());
                marginals.push(MarginalSummary {
                    axis: axis.to_string(),
                    value: value.to_string(),
                    bootstrap: Some(rule.to_string()),
                    stat: group(&sorted, f),
                });
            }
        }
    }

    let failed_runs = sorted.iter().filter(|r| r.completed().is_none()).count();
    Ok(SweepSummary {
        total_runs: sorted.len(),
        failed_runs,
        overall: group(&sorted, BTreeMap::new()),
        cells,
        marginals,
        orderings: standard_orderings(&sorted),
        runs: sorted.iter().map(|r| run_point(r)).collect(),
    })
}
