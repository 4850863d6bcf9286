use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SweepSpec};
use super::experiment::run_experiment;
use crate::diagnostics::{summarize, RunMetrics, RunRecord, RunStatus, SweepSummary};
use crate::{Error, Result};

pub const OUT_DIR_VAR: &str = "TRIAD_OUT_DIR";
pub const THREADS_VAR: &str = "TRIAD_THREADS";

/// `$TRIAD_OUT_DIR` when set, otherwise `default`.
pub fn out_dir_from_env(default: &Path) -> PathBuf {
    std::env::var_os(OUT_DIR_VAR).map(PathBuf::from).unwrap_or_else(|| default.to_path_buf())
}

/// Worker count from `$TRIAD_THREADS`; `None` lets rayon decide.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::config(format!("{THREADS_VAR}={v:?} is not a positive integer"))),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub run_id: String,
    pub config_hash: String,
    pub cell: usize,
    pub replication: usize,
    pub seed: u64,
    pub labels: BTreeMap<String, String>,
    #[serde(flatten)]
    pub status: RunStatus,
    pub interval_length: u64,
    pub threshold: f64,
    pub agent_steps: u64,
    /// Relative to the sweep directory.
    pub metrics_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SweepSpec,
    pub runs: Vec<ManifestRun>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub manifest: Manifest,
    pub records: Vec<RunRecord>,
    pub summary: SweepSummary,
}

struct Job {
    run_id: String,
    cell: usize,
    replication: usize,
    config: ExperimentConfig,
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

fn execute(job: &Job) -> (RunStatus, Option<RunMetrics>, u64) {
    match catch_unwind(AssertUnwindSafe(|| run_experiment(&job.config))) {
        Ok(Ok(out)) => (RunStatus::Completed, Some(out.metrics), out.agent_steps),
        Ok(Err(e)) => (RunStatus::Failed(e.to_string()), None, 0),
        Err(p) => (RunStatus::Failed(format!("panic: {}", panic_message(p))), None, 0),
    }
}

/// Run every cell × replication, write `manifest.json`, `runs/<run_id>.csv`
/// and `summary.json` under `out_dir`. Individual run failures are recorded
/// in the manifest and never abort the sweep.
///
/// Replication `r` of every cell uses seed `base_seed + r`.
pub fn run_sweep(spec: &SweepSpec, out_dir: &Path, threads: Option<usize>) -> Result<SweepReport> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for cell in spec.cells()? {
        for r in 0..spec.replications {
            jobs.push(Job {
                run_id: format!("c{:04}-r{:02}", cell.index, r),
                cell: cell.index,
                replication: r,
                config: ExperimentConfig { seed: spec.base_seed.wrapping_add(r as u64), ..cell.config.clone() },
            });
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let results: Vec<_> = pool.install(|| jobs.par_iter().map(execute).collect());

    let runs_dir = out_dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let mut records = Vec::with_capacity(jobs.len());
    let mut manifest_runs = Vec::with_capacity(jobs.len());
    for (job, (status, metrics, agent_steps)) in jobs.iter().zip(results) {
        let config_hash = job.config.config_hash();
        let env = job.config.env.build()?;
        let threshold = crate::diagnostics::soft_divergence_threshold(env.discount(), job.config.reward_bound)?;
        let metrics_file = match &metrics {
            Some(m) => {
                let rel = format!("runs/{}.csv", job.run_id);
                let file = BufWriter::new(fs::File::create(out_dir.join(&rel))?);
                m.write_csv(&job.run_id, &config_hash, file)?;
                Some(rel)
            }
            None => None,
        };
        manifest_runs.push(ManifestRun {
            run_id: job.run_id.clone(),
            config_hash: config_hash.clone(),
            cell: job.cell,
            replication: job.replication,
            seed: job.config.seed,
            labels: job.config.labels(),
            status: status.clone(),
            interval_length: job.config.interval_length,
            threshold,
            agent_steps,
            metrics_file,
        });
        records.push(RunRecord {
            run_id: job.run_id.clone(),
            config_hash,
            labels: job.config.labels(),
            seed: job.config.seed,
            status,
            metrics,
        });
    }
    let manifest = Manifest { spec: spec.clone(), runs: manifest_runs };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    let summary = summarize(&records)?;
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(SweepReport { manifest, records, summary })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Read a sweep directory back into run records.
pub fn load_sweep(dir: &Path) -> Result<(Manifest, Vec<RunRecord>)> {
    let path = dir.join("manifest.json");
    if !path.is_file() {
        return Err(Error::config(format!("no manifest.json in {}", dir.display())));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
    let mut records = Vec::with_capacity(manifest.runs.len());
    for run in &manifest.runs {
        let metrics = match (&run.status, &run.metrics_file) {
            (RunStatus::Completed, Some(rel)) => {
                let (_, _, intervals) = RunMetrics::read_csv(fs::File::open(dir.join(rel))?)?;
                Some(RunMetrics::from_intervals(run.interval_length, run.threshold, intervals)?)
            }
            (RunStatus::Completed, None) => {
                return Err(Error::config(format!("run {} has no metrics file", run.run_id)));
            }
            (RunStatus::Failed(_), _) => None,
        };
        records.push(RunRecord {
            run_id: run.run_id.clone(),
            config_hash: run.config_hash.clone(),
            labels: run.labels.clone(),
            seed: run.seed,
            status: run.status.clone(),
            metrics,
        });
    }
    Ok((manifest, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_job_becomes_failed_record() {
        let job = Job {
            run_id: "bad".into(),
            cell: 0,
            replication: 0,
            config: ExperimentConfig { batch_size: 0, ..Default::default() },
        };
        let (status, metrics, steps) = execute(&job);
        assert!(matches!(status, RunStatus::Failed(_)));
        assert!(metrics.is_none());
        assert_eq!(steps, 0);
    }

    #[test]
    fn thread_override_parsing() {
        // only checks the parser on an unset variable; setting env vars in
        // parallel tests would race
        if std::env::var_os(THREADS_VAR).is_none() {
            assert_eq!(threads_from_env().unwrap(), None);
        }
    }
}
