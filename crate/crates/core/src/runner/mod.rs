//! Training loop, factorial sweeps and the expected-update traces.

mod config;
mod experiment;
mod sweep;
mod tvr;

pub use config::{EnvSpec, ExperimentConfig, GridCell, SweepAxes, SweepSpec};
pub use experiment::{run_experiment, RunOutcome};
pub use sweep::{load_sweep, out_dir_from_env, run_sweep, threads_from_env, Manifest, ManifestRun, SweepReport};
pub use tvr::{growth_time, tvr_trace, TvrFamily, TvrRow, TvrTrace, TvrTraceConfig};
