//! Expected-update training on the two-state example: every update applies
//! the full semi-gradient TD direction weighted by the chosen state
//! distribution, so traces are deterministic.

use serde::{Deserialize, Serialize};

use crate::approx::{Approximator, OptimizerSpec, OptimizerState, Params};
use crate::mdp::{make_tvr, Policy, TVR_S1, TVR_S2};
use crate::spectral::{tvr_problem, StabilityReport, TvrWeighting};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TvrFamily {
    /// `v = w φ`.
    Linear,
    /// `v = w (φ + u)` with learnable `u`.
    FactoredAffine,
}

impl TvrFamily {
    pub fn label(self) -> &'static str {
        match self {
            TvrFamily::Linear => "linear",
            TvrFamily::FactoredAffine => "factored-affine",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvrTraceConfig {
    pub gamma: f64,
    pub weighting: TvrWeighting,
    pub family: TvrFamily,
    pub step: f64,
    pub updates: usize,
    pub w0: f64,
    pub u0: f64,
    /// Bootstrap from a copy of the parameters refreshed every this many
    /// updates; `None` bootstraps from the live parameters.
    pub sync_period: Option<usize>,
}

impl TvrTraceConfig {
    pub fn new(gamma: f64, weighting: TvrWeighting, family: TvrFamily) -> Self {
        TvrTraceConfig { gamma, weighting, family, step: 0.01, updates: 10_000, w0: 1.0, u0: 0.0, sync_period: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvrRow {
    pub update: usize,
    pub w: f64,
    pub u: f64,
    pub v1: f64,
    pub v2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvrTrace {
    pub config: TvrTraceConfig,
    /// Row 0 is the initial point; one row per update after that.
    pub rows: Vec<TvrRow>,
    /// Stability verdict of the linear expected-update operator for this
    /// discount, weighting and step.
    pub report: StabilityReport,
    /// The trace stopped early because values stopped being finite.
    pub overflowed: bool,
}

impl TvrTrace {
    pub fn final_row(&self) -> &TvrRow {
        self.rows.last().expect("trace has an initial row")
    }

    /// Largest `max(|v(s1)|, |v(s2)|)` over the trace.
    pub fn peak_value(&self) -> f64 {
        self.rows.iter().map(|r| r.v1.abs().max(r.v2.abs())).fold(0.0, f64::max)
    }
}

fn row(update: usize, family: TvrFamily, p: &Params) -> TvrRow {
    let (w, u) = match family {
        TvrFamily::Linear => (p[0], 0.0),
        TvrFamily::FactoredAffine => (p[0], p[1]),
    };
    TvrRow { update, w, u, v1: w * (1.0 + u), v2: w * (2.0 + u) }
}

pub fn tvr_trace(cfg: &TvrTraceConfig) -> Result<TvrTrace> {
    if !cfg.step.is_finite() || cfg.step <= 0.0 {
        return Err(Error::config("step must be positive"));
    }
    if cfg.sync_period == Some(0) {
        return Err(Error::config("sync period must be positive"));
    }
    let tvr = make_tvr(cfg.gamma, cfg.family == TvrFamily::FactoredAffine)?;
    let report = tvr_problem(cfg.gamma, cfg.weighting, cfg.step)?.classify()?;
    let approx = Approximator::new(tvr.approximator_kind(), tvr.features.clone(), 1)?;
    let mut params = Params::from(match cfg.family {
        TvrFamily::Linear => vec![cfg.w0],
        TvrFamily::FactoredAffine => vec![cfg.w0, cfg.u0],
    });
    let mut optimizer = OptimizerState::new(OptimizerSpec::sgd(cfg.step), params.len())?;
    let p = tvr.mdp.policy_transition(&Policy::uniform(2, 1));
    let d = cfg.weighting.weights();
    let gamma = tvr.mdp.discount();

    let mut frozen = params.clone();
    let mut rows = Vec::with_capacity(cfg.updates + 1);
    rows.push(row(0, cfg.family, &params));
    let mut overflowed = false;
    let mut direction = vec![0.0; params.len()];
    for t in 1..=cfg.updates {
        let boot = if cfg.sync_period.is_some() { &frozen } else { &params };
        let v_boot = [approx.value(boot, TVR_S1, 0)?, approx.value(boot, TVR_S2, 0)?];
        direction.iter_mut().for_each(|x| *x = 0.0);
        for s in [TVR_S1, TVR_S2] {
            if d[s] == 0.0 {
                continue;
            }
            let next: f64 = (0..2).map(|s2| p[(s, s2)] * v_boot[s2]).sum();
            let delta = tvr.mdp.reward(s, 0) + gamma * next - approx.value(&params, s, 0)?;
            approx.accumulate_gradient(&params, s, 0, d[s] * delta, &mut direction)?;
        }
        match optimizer.apply(&mut params, &direction) {
            Ok(()) => {}
            Err(Error::NonFinite) => {
                overflowed = true;
                break;
            }
            Err(e) => return Err(e),
        }
        let r = row(t, cfg.family, &params);
        if !(r.v1.is_finite() && r.v2.is_finite()) {
            overflowed = true;
            break;
        }
        rows.push(r);
        if let Some(k) = cfg.sync_period {
            if t % k == 0 {
                frozen = params.clone();
            }
        }
    }
    Ok(TvrTrace { config: cfg.clone(), rows, report, overflowed })
}

/// First update at which `|w|` reaches `factor × |w0|`, if any.
pub fn growth_time(trace: &TvrTrace, factor: f64) -> Option<usize> {
    let w0 = trace.rows[0].w.abs();
    trace.rows.iter().find(|r| r.w.abs() >= factor * w0).map(|r| r.update)
}
