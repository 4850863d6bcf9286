//! Environments: the sequential-interaction view of a finite MDP plus the
//! constructors for the counterexamples and the gridworld control task.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{clip_reward, FeatureMap, Mdp};
use crate::approx::ApproximatorKind;
use crate::{Error, Result};

/// Outcome of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub next_state: usize,
    /// Reward clipped to `[-1, 1]`; this is what learners see.
    pub reward: f64,
    /// Reward as the environment defines it, used for episode returns.
    pub raw_reward: f64,
    pub terminal: bool,
}

/// A finite MDP with featurized states, a start distribution and an episode
/// time limit. Immutable: callers carry the current state themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    mdp: Mdp,
    features: FeatureMap,
    start: Vec<f64>,
    max_episode_steps: usize,
}

impl Env {
    pub fn new(mdp: Mdp, features: FeatureMap, start: Vec<f64>, max_episode_steps: usize) -> Result<Self> {
        if features.n_states() != mdp.n_states() {
            return Err(Error::ShapeMismatch { expected: mdp.n_states(), actual: features.n_states() });
        }
        if start.len() != mdp.n_states() {
            return Err(Error::ShapeMismatch { expected: mdp.n_states(), actual: start.len() });
        }
        let total: f64 = start.iter().sum();
        if start.iter().any(|&p| p.is_nan() || p < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::mdp("start distribution is not a distribution"));
        }
        if max_episode_steps == 0 {
            return Err(Error::config("max_episode_steps must be positive"));
        }
        Ok(Env { mdp, features, start, max_episode_steps })
    }

    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    /// The MDP with clipped rewards: the problem learners actually solve.
    pub fn oracle_mdp(&self) -> Mdp {
        self.mdp.clipped()
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    pub fn discount(&self) -> f64 {
        self.mdp.discount()
    }

    pub fn max_episode_steps(&self) -> usize {
        self.max_episode_steps
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.start, rng)
    }

    pub fn step<R: Rng + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> Step {
        let next_state = sample_index(self.mdp.transition(state, action), rng);
        let raw_reward = self.mdp.reward(state, action);
        Step {
            next_state,
            reward: clip_reward(raw_reward),
            raw_reward,
            terminal: self.mdp.is_terminal(next_state),
        }
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Normalized `(x, y)` coordinates.
    Coordinates,
    /// One-hot cell encoding.
    OneHot,
    /// Coordinates followed by the one-hot encoding.
    #[default]
    Both,
}

fn default_max_steps() -> usize {
    100
}

/// Gridworld with four actions (up, down, left, right). The agent starts in
/// the top-left cell and the episode ends on entering the bottom-right goal.
/// Bumping into a wall leaves the agent in place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridworldConfig {
    pub width: usize,
    pub height: usize,
    pub goal_reward: f64,
    #[serde(default)]
    pub step_reward: f64,
    pub gamma: f64,
    #[serde(default = "default_max_steps")]
    pub max_episode_steps: usize,
    #[serde(default)]
    pub features: FeatureMode,
    /// Start uniformly over all non-goal cells instead of the corner.
    #[serde(default)]
    pub random_start: bool,
}

impl GridworldConfig {
    pub fn new(width: usize, height: usize, goal_reward: f64, step_reward: f64, gamma: f64) -> Self {
        GridworldConfig {
            width,
            height,
            goal_reward,
            step_reward,
            gamma,
            max_episode_steps: default_max_steps(),
            features: FeatureMode::default(),
            random_start: false,
        }
    }

    pub fn goal(&self) -> usize {
        self.width * self.height - 1
    }
}

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

pub fn make_gridworld(cfg: &GridworldConfig) -> Result<Env> {
    let (w, h) = (cfg.width, cfg.height);
    if w == 0 || h == 0 || w * h < 2 {
        return Err(Error::config(format!("gridworld {w}x{h} needs at least two cells")));
    }
    if !cfg.goal_reward.is_finite() || !cfg.step_reward.is_finite() {
        return Err(Error::config("non-finite gridworld reward"));
    }
    let n = w * h;
    let goal = cfg.goal();
    let mut transition = Vec::with_capacity(n);
    let mut reward = Vec::with_capacity(n);
    for s in 0..n {
        let (x, y) = (s % w, s / w);
        let mut rows = Vec::with_capacity(4);
        let mut rs = Vec::with_capacity(4);
        for a in [UP, DOWN, LEFT, RIGHT] {
            let next = if s == goal {
                s
            } else {
                match a {
                    UP if y > 0 => s - w,
                    DOWN if y + 1 < h => s + w,
                    LEFT if x > 0 => s - 1,
                    RIGHT if x + 1 < w => s + 1,
                    _ => s,
                }
            };
            let mut row = vec![0.0; n];
            row[next] = 1.0;
            rows.push(row);
            rs.push(match (s == goal, next == goal) {
                (true, _) => 0.0,
                (false, true) => cfg.goal_reward,
                (false, false) => cfg.step_reward,
            });
        }
        transition.push(rows);
        reward.push(rs);
    }
    let mut terminal = vec![false; n];
    terminal[goal] = true;
    let mdp = Mdp::new(transition, reward, cfg.gamma, terminal)?;

    let scale = |v: usize, extent: usize| if extent > 1 { v as f64 / (extent - 1) as f64 } else { 0.0 };
    let rows = (0..n)
        .map(|s| {
            let mut f = Vec::new();
            if matches!(cfg.features, FeatureMode::Coordinates | FeatureMode::Both) {
                f.push(scale(s % w, w));
                f.push(scale(s / w, h));
            }
            if matches!(cfg.features, FeatureMode::OneHot | FeatureMode::Both) {
                f.extend((0..n).map(|c| if c == s { 1.0 } else { 0.0 }));
            }
            f
        })
        .collect();
    let features = FeatureMap::new(rows)?;

    let mut start = vec![0.0; n];
    if cfg.random_start {
        for p in start.iter_mut().take(n - 1) {
            *p = 1.0 / (n - 1) as f64;
        }
        // absorb rounding so the distribution check is exact
        let total: f64 = start.iter().sum();
        start[0] += 1.0 - total;
    } else {
        start[0] = 1.0;
    }
    Env::new(mdp, features, start, cfg.max_episode_steps)
}

/// The two-state Tsitsiklis–Van Roy example: `s1 → s2`, `s2 → s2`, all
/// rewards zero, scalar features `φ(s1) = 1`, `φ(s2) = 2`. A continuing task.
#[derive(Debug, Clone, PartialEq)]
pub struct Tvr {
    pub mdp: Mdp,
    pub features: FeatureMap,
    /// When set, values are `w(φ(s) + u)` with `u` learnable.
    pub learnable_offset: bool,
}

pub const TVR_S1: usize = 0;
pub const TVR_S2: usize = 1;

pub fn make_tvr(gamma: f64, learnable_u: bool) -> Result<Tvr> {
    let transition = vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]];
    let mdp = Mdp::new(transition, vec![vec![0.0], vec![0.0]], gamma, vec![false, false])?;
    let features = FeatureMap::new(vec![vec![1.0], vec![2.0]])?;
    Ok(Tvr { mdp, features, learnable_offset: learnable_u })
}

impl Tvr {
    pub fn approximator_kind(&self) -> ApproximatorKind {
        if self.learnable_offset {
            ApproximatorKind::FactoredAffine { learn_offset: true }
        } else {
            ApproximatorKind::Linear
        }
    }

    /// Sampled-trajectory view starting in `s1`.
    pub fn env(&self, max_episode_steps: usize) -> Result<Env> {
        Env::new(self.mdp.clone(), self.features.clone(), vec![1.0, 0.0], max_episode_steps)
    }
}

/// Baird's seven-state star. Action 0 ("dashed") moves uniformly to one of
/// the six outer states, action 1 ("solid") moves to the centre state 6.
/// Features: outer state `i` is `2e_i + e_7`, the centre is `e_6 + 2e_7`.
pub fn make_baird(gamma: f64) -> Result<(Mdp, FeatureMap)> {
    let n = 7;
    let mut dashed = vec![1.0 / 6.0; n];
    dashed[6] = 0.0;
    let total: f64 = dashed.iter().sum();
    dashed[0] += 1.0 - total;
    let mut solid = vec![0.0; n];
    solid[6] = 1.0;
    let transition = vec![vec![dashed, solid]; n];
    let mdp = Mdp::new(transition, vec![vec![0.0, 0.0]; n], gamma, vec![false; n])?;
    let rows = (0..n)
        .map(|s| {
            let mut f = vec![0.0; 8];
            if s < 6 {
                f[s] = 2.0;
                f[7] = 1.0;
            } else {
                f[6] = 1.0;
                f[7] = 2.0;
            }
            f
        })
        .collect();
    Ok((mdp, FeatureMap::new(rows)?))
}
