use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::approx::{ApproximatorKind, Capacity, OptimizerSpec};
use crate::mdp::{make_gridworld, make_tvr, Env, FeatureMap, GridworldConfig, Mdp};
use crate::targets::{BootstrapKind, BootstrapRule};
use crate::{Error, Result};

/// Which environment a run interacts with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvSpec {
    Gridworld(GridworldConfig),
    /// The two-state example as a sampled continuing task (episodes are cut
    /// by the time limit).
    Tvr {
        gamma: f64,
        #[serde(default = "default_tvr_steps")]
        max_episode_steps: usize,
    },
    Custom {
        mdp: Mdp,
        features: FeatureMap,
        start: Vec<f64>,
        max_episode_steps: usize,
    },
}

fn default_tvr_steps() -> usize {
    100
}

impl EnvSpec {
    pub fn build(&self) -> Result<Env> {
        match self {
            EnvSpec::Gridworld(cfg) => make_gridworld(cfg),
            EnvSpec::Tvr { gamma, max_episode_steps } => make_tvr(*gamma, false)?.env(*max_episode_steps),
            EnvSpec::Custom { mdp, features, start, max_episode_steps } => {
                Env::new(mdp.clone(), features.clone(), start.clone(), *max_episode_steps)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            EnvSpec::Gridworld(cfg) => format!("gridworld-{}x{}", cfg.width, cfg.height),
            EnvSpec::Tvr { .. } => "tvr".into(),
            EnvSpec::Custom { mdp, .. } => format!("custom-{}", mdp.n_states()),
        }
    }
}

/// Everything that determines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub approximator: ApproximatorKind,
    pub bootstrap: BootstrapKind,
    /// Steps per segment.
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub normalize_is_weights: bool,
    pub epsilon: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub min_fill: f64,
    /// Learn once every this many agent steps.
    pub learn_every: u64,
    /// Copy online parameters into the target every this many agent steps.
    pub target_sync_period: u64,
    pub optimizer: OptimizerSpec,
    pub total_frames: u64,
    pub interval_length: u64,
    /// Largest absolute clipped reward; sets the soft-divergence threshold.
    pub reward_bound: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvSpec::Gridworld(GridworldConfig::new(5, 5, 1.0, 0.0, 0.99)),
            approximator: ApproximatorKind::mlp(Capacity::Small),
            bootstrap: BootstrapKind::Q,
            n: 1,
            alpha: 0.0,
            beta: 0.0,
            normalize_is_weights: false,
            epsilon: 0.01,
            batch_size: 32,
            replay_capacity: 50_000,
            min_fill: 0.2,
            learn_every: 4,
            target_sync_period: 2500,
            optimizer: OptimizerSpec::adam(1e-4),
            total_frames: 200_000,
            interval_length: 10_000,
            reward_bound: 1.0,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn rule(&self) -> Result<BootstrapRule> {
        BootstrapRule::new(self.bootstrap, self.n)
    }

    pub fn validate(&self) -> Result<()> {
        self.rule()?;
        self.optimizer.validate()?;
        let checks: [(bool, &str); 11] = [
            (self.alpha.is_finite() && self.alpha >= 0.0, "alpha must be finite and non-negative"),
            ((0.0..=1.0).contains(&self.beta), "beta must lie in [0, 1]"),
            ((0.0..=1.0).contains(&self.epsilon), "epsilon must lie in [0, 1]"),
            (self.batch_size > 0, "batch_size must be positive"),
            (self.replay_capacity >= self.batch_size, "replay_capacity must be at least batch_size"),
            (self.min_fill > 0.0 && self.min_fill <= 1.0, "min_fill must lie in (0, 1]"),
            (self.learn_every > 0, "learn_every must be positive"),
            (self.target_sync_period > 0, "target_sync_period must be positive"),
            (self.total_frames > 0, "total_frames must be positive"),
            (self.interval_length > 0, "interval_length must be positive"),
            (self.reward_bound.is_finite() && self.reward_bound > 0.0, "reward_bound must be positive"),
        ];
        if let Some((_, msg)) = checks.iter().find(|(ok, _)| !ok) {
            return Err(Error::config(*msg));
        }
        self.env.build()?;
        Ok(())
    }

    /// Short hex digest of the configuration with the seed zeroed, so that
    /// replications of one grid cell share a hash.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        let json = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Axis labels identifying the grid cell.
    pub fn labels(&self) -> BTreeMap<String, String> {
        [
            ("env", self.env.label()),
            ("approximator", self.approximator.label()),
            ("bootstrap", self.bootstrap.label().to_string()),
            ("n", self.n.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Axis lists; an absent axis keeps the base value, an empty list is invalid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub bootstrap: Option<Vec<BootstrapKind>>,
    pub n: Option<Vec<usize>>,
    pub capacity: Option<Vec<Capacity>>,
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

/// A factorial grid over [`ExperimentConfig`] fields, replicated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub name: String,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Environments to cross with the axes; defaults to the base environment.
    #[serde(default)]
    pub envs: Vec<EnvSpec>,
    #[serde(default)]
    pub base: ExperimentConfig,
    #[serde(default)]
    pub axes: SweepAxes,
}

fn default_replications() -> usize {
    3
}

fn axis<T: Clone>(name: &str, values: &Option<Vec<T>>, base: T) -> Result<Vec<T>> {
    match values {
        None => Ok(vec![base]),
        Some(v) if v.is_empty() => Err(Error::config(format!("sweep axis `{name}` is empty"))),
        Some(v) => Ok(v.clone()),
    }
}

/// One cell of an expanded grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub index: usize,
    pub config: ExperimentConfig,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SweepSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Expand the axes into grid cells (seed left at the base value).
    pub fn cells(&self) -> Result<Vec<GridCell>> {
        let b = &self.base;
        let envs = if self.envs.is_empty() { vec![b.env.clone()] } else { self.envs.clone() };
        let bootstraps = axis("bootstrap", &self.axes.bootstrap, b.bootstrap)?;
        let ns = axis("n", &self.axes.n, b.n)?;
        let approximators = match &self.axes.capacity {
            None => vec![b.approximator.clone()],
            Some(_) => axis("capacity", &self.axes.capacity, Capacity::Small)?
                .into_iter()
                .map(ApproximatorKind::mlp)
                .collect(),
        };
        let alphas = axis("alpha", &self.axes.alpha, b.alpha)?;
        let betas = axis("beta", &self.axes.beta, b.beta)?;

        let mut cells = Vec::new();
        for env in &envs {
            for approximator in &approximators {
                for &bootstrap in &bootstraps {
                    for &n in &ns {
                        for &alpha in &alphas {
                            for &beta in &betas {
                                let config = ExperimentConfig {
                                    env: env.clone(),
                                    approximator: approximator.clone(),
                                    bootstrap,
                                    n,
                                    alpha,
                                    beta,
                                    ..b.clone()
                                };
                                cells.push(GridCell { index: cells.len(), config });
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::config("replications must be positive"));
        }
        for cell in self.cells()? {
            cell.config.validate()?;
        }
        Ok(())
    }

    /// Number of runs: product of axis cardinalities times replications.
    pub fn n_runs(&self) -> Result<usize> {
        Ok(self.cells()?.len() * self.replications)
    }
}
