//! Laboratory for the learning dynamics of Q-learning under the deadly triad:
//! function approximation, bootstrapping and off-policy sampling.
//!
//! The crate is organised bottom-up:
//!
//! - [`mdp`]: finite MDPs, environments, policies and exact evaluation oracles.
//! - [`approx`]: tabular, linear, factored-affine and MLP value functions with
//!   exact gradients and SGD/Adam steps.
//! - [`targets`]: n-step returns and the four bootstrap-target rules.
//! - [`replay`]: sum-tree backed prioritized experience replay.
//! - [`spectral`]: expected-update operators of linear TD and their stability.
//! - [`diagnostics`]: interval statistics and soft-divergence detection.
//! - [`runner`]: the DQN-style training loop, expected-update counterexample
//!   runs and the factorial sweep engine.

pub mod approx;
pub mod diagnostics;
mod error;
pub mod mdp;
pub mod replay;
pub mod runner;
pub mod spectral;
pub mod targets;

pub use approx::{Approximator, ApproximatorKind, Capacity, OptimizerSpec, OptimizerState, Params};
pub use diagnostics::{RunMetrics, SweepSummary};
pub use error::{Error, Result};
pub use mdp::{Env, FeatureMap, Mdp, Policy};
pub use replay::{PrioritizedBuffer, ReplayConfig};
pub use runner::{ExperimentConfig, SweepSpec};
pub use spectral::{ExpectedUpdateOperator, StabilityReport, Verdict};
pub use targets::{BootstrapKind, BootstrapRule, TransitionSegment};
