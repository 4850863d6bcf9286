//! Finite MDPs, feature maps, policies and the exact oracles used to check
//! learned values.

mod env;

pub use env::{
    make_baird, make_gridworld, make_tvr, Env, FeatureMode, GridworldConfig, Step, Tvr, DOWN, LEFT, RIGHT, TVR_S1, TVR_S2, UP,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const ROW_TOLERANCE: f64 = 1e-12;

/// Clip a reward to `[-1, 1]`.
pub fn clip_reward(r: f64) -> f64 {
    r.clamp(-1.0, 1.0)
}

/// Index of the largest entry, lowest index on ties.
///
/// NaN entries never win a comparison, so the result is the first maximizer
/// among the comparable values (or 0 if all are NaN).
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Largest entry. Equivalent to `values[argmax(values)]`.
pub fn max_value(values: &[f64]) -> f64 {
    values[argmax(values)]
}

/// Sample an action ε-greedily: with probability `1 - epsilon` the lowest-index
/// maximizer of `q_values`, otherwise an action drawn uniformly from all of them.
///
/// Exactly one uniform draw is consumed to decide between the branches, plus
/// one more when exploring, so runs stay reproducible for a fixed seed.
pub fn epsilon_greedy<R: Rng + ?Sized>(q_values: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    if q_values.is_empty() {
        return Err(Error::Empty("q_values"));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::config(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if rng.gen::<f64>() < epsilon {
        Ok(rng.gen_range(0..q_values.len()))
    } else {
        Ok(argmax(q_values))
    }
}

/// Finite MDP with dense transition tensor `P[s][a][s']`, expected rewards
/// `R[s][a]`, a discount below one and per-state terminal flags.
///
/// Terminal states have value zero by definition; their transition rows must
/// still be valid distributions (a self-loop is conventional).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpSpec", into = "MdpSpec")]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    discount: f64,
    terminal: Vec<bool>,
}

/// Nested-vector form of [`Mdp`] used in config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpSpec {
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub discount: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<Vec<bool>>,
}

impl TryFrom<MdpSpec> for Mdp {
    type Error = Error;

    fn try_from(spec: MdpSpec) -> Result<Self> {
        let terminal = spec
            .terminal
            .unwrap_or_else(|| vec![false; spec.transition.len()]);
        Mdp::new(spec.transition, spec.reward, spec.discount, terminal)
    }
}

impl From<Mdp> for MdpSpec {
    fn from(mdp: Mdp) -> Self {
        let transition = (0..mdp.n_states)
            .map(|s| (0..mdp.n_actions).map(|a| mdp.transition(s, a).to_vec()).collect())
            .collect();
        let reward = (0..mdp.n_states)
            .map(|s| (0..mdp.n_actions).map(|a| mdp.reward(s, a)).collect())
            .collect();
        MdpSpec {
            transition,
            reward,
            discount: mdp.discount,
            terminal: Some(mdp.terminal),
        }
    }
}

impl Mdp {
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        discount: f64,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        let n_states = transition.len();
        if n_states == 0 {
            return Err(Error::mdp("no states"));
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(Error::mdp("no actions"));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::mdp(format!("discount {discount} outside [0, 1)")));
        }
        if reward.len() != n_states || terminal.len() != n_states {
            return Err(Error::mdp("reward/terminal length differs from state count"));
        }
        let mut flat_p = Vec::with_capacity(n_states * n_actions * n_states);
        let mut flat_r = Vec::with_capacity(n_states * n_actions);
        for (s, (rows, rewards)) in transition.iter().zip(&reward).enumerate() {
            if rows.len() != n_actions || rewards.len() != n_actions {
                return Err(Error::mdp(format!("state {s} has the wrong number of actions")));
            }
            for (a, row) in rows.iter().enumerate() {
                check_distribution(row, n_states).map_err(|e| Error::mdp(format!("P[{s}][{a}]: {e}")))?;
                flat_p.extend_from_slice(row);
            }
            if rewards.iter().any(|r| !r.is_finite()) {
                return Err(Error::mdp(format!("non-finite reward in state {s}")));
            }
            flat_r.extend_from_slice(rewards);
        }
        Ok(Mdp {
            n_states,
            n_actions,
            transition: flat_p,
            reward: flat_r,
            discount,
            terminal,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    /// Next-state distribution for `(s, a)`.
    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Same MDP with a different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::mdp(format!("discount {discount} outside [0, 1)")));
        }
        Ok(Mdp { discount, ..self.clone() })
    }

    /// Same MDP with every reward clipped to `[-1, 1]`.
    pub fn clipped(&self) -> Self {
        Mdp {
            reward: self.reward.iter().map(|&r| clip_reward(r)).collect(),
            ..self.clone()
        }
    }

    /// State-to-state transition matrix under `policy`. Terminal rows are zero.
    pub fn policy_transition(&self, policy: &Policy) -> DMatrix<f64> {
        let n = self.n_states;
        let mut p = DMatrix::zeros(n, n);
        for s in (0..n).filter(|&s| !self.terminal[s]) {
            for (a, &pa) in policy.action_probs(s).iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                for (s2, &ps) in self.transition(s, a).iter().enumerate() {
                    p[(s, s2)] += pa * ps;
                }
            }
        }
        p
    }

    /// Expected one-step reward under `policy`. Terminal entries are zero.
    pub fn policy_reward(&self, policy: &Policy) -> DVector<f64> {
        DVector::from_fn(self.n_states, |s, _| {
            if self.terminal[s] {
                0.0
            } else {
                policy
                    .action_probs(s)
                    .iter()
                    .enumerate()
                    .map(|(a, &pa)| pa * self.reward(s, a))
                    .sum()
            }
        })
    }
}

fn check_distribution(row: &[f64], len: usize) -> std::result::Result<(), String> {
    if row.len() != len {
        return Err(format!("length {} instead of {len}", row.len()));
    }
    if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err("negative or non-finite probability".into());
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOLERANCE {
        return Err(format!("sums to {total}"));
    }
    Ok(())
}

/// Fixed-dimension feature vectors, one per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct FeatureMap {
    dim: usize,
    data: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for FeatureMap {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        FeatureMap::new(rows)
    }
}

impl From<FeatureMap> for Vec<Vec<f64>> {
    fn from(f: FeatureMap) -> Self {
        (0..f.n_states()).map(|s| f.row(s).to_vec()).collect()
    }
}

impl FeatureMap {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::Empty("feature rows"))?;
        if dim == 0 {
            return Err(Error::config("feature dimension is zero"));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(Error::ShapeMismatch { expected: dim, actual: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(FeatureMap { dim, data })
    }

    /// Identity features: state `s` maps to the unit vector `e_s`.
    pub fn one_hot(n_states: usize) -> Self {
        let mut data = vec![0.0; n_states * n_states];
        for s in 0..n_states {
            data[s * n_states + s] = 1.0;
        }
        FeatureMap { dim: n_states, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.dim..(s + 1) * self.dim]
    }

    /// The `n_states × dim` matrix Φ.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_states(), self.dim, &self.data)
    }

    /// Every feature multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        FeatureMap {
            dim: self.dim,
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }
}

/// Per-state action distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Policy {
    n_actions: usize,
    probs: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for Policy {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Policy::from_rows(rows)
    }
}

impl From<Policy> for Vec<Vec<f64>> {
    fn from(p: Policy) -> Self {
        p.probs.chunks(p.n_actions).map(<[f64]>::to_vec).collect()
    }
}

impl Policy {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_actions = rows.first().map(Vec::len).ok_or(Error::Empty("policy rows"))?;
        if n_actions == 0 {
            return Err(Error::config("policy has no actions"));
        }
        let mut probs = Vec::with_capacity(rows.len() * n_actions);
        for (s, row) in rows.iter().enumerate() {
            check_distribution(row, n_actions).map_err(|e| Error::config(format!("policy row {s}: {e}")))?;
            probs.extend_from_slice(row);
        }
        Ok(Policy { n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::config(format!("action {a} out of range in state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Policy { n_actions, probs })
    }

    /// Greedy policy (lowest-index ties) for per-state action values.
    pub fn greedy(q: &[Vec<f64>]) -> Result<Self> {
        let n_actions = q.first().map(Vec::len).ok_or(Error::Empty("q table"))?;
        let actions: Vec<usize> = q.iter().map(|row| argmax(row)).collect();
        Policy::deterministic(&actions, n_actions)
    }

    /// ε-greedy distribution wrapped around per-state action values.
    pub fn epsilon_greedy(q: &[Vec<f64>], epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::config(format!("epsilon {epsilon} outside [0, 1]")));
        }
        let n_actions = q.first().map(Vec::len).ok_or(Error::Empty("q table"))?;
        let explore = epsilon / n_actions as f64;
        let mut probs = Vec::with_capacity(q.len() * n_actions);
        for row in q {
            let best = argmax(row);
            probs.extend((0..n_actions).map(|a| explore + if a == best { 1.0 - epsilon } else { 0.0 }));
        }
        Ok(Policy { n_actions, probs })
    }

    pub fn n_states(&self) -> usize {
        self.probs.len() / self.n_actions
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn action_probs(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    fn check_against(&self, mdp: &Mdp) -> Result<()> {
        if self.n_states() != mdp.n_states() || self.n_actions != mdp.n_actions() {
            return Err(Error::config(format!(
                "policy is {}x{}, MDP is {}x{}",
                self.n_states(),
                self.n_actions,
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }
}

/// Exact `v_π` from the Bellman system `(I - γ P_π) v = R_π` by dense LU.
pub fn solve_policy_values(mdp: &Mdp, policy: &Policy) -> Result<Vec<f64>> {
    policy.check_against(mdp)?;
    let n = mdp.n_states();
    let lhs = DMatrix::identity(n, n) - mdp.policy_transition(policy) * mdp.discount();
    let rhs = mdp.policy_reward(policy);
    let v = lhs.lu().solve(&rhs).ok_or(Error::Singular)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(v.iter().copied().collect())
}

/// Residual `‖v - R_π - γ P_π v‖∞`.
pub fn bellman_residual(mdp: &Mdp, policy: &Policy, v: &[f64]) -> f64 {
    let v = DVector::from_column_slice(v);
    let r = v.clone() - mdp.policy_reward(policy) - mdp.policy_transition(policy) * &v * mdp.discount();
    r.amax()
}

/// Optimal action values by value iteration, iterated until the sup-norm
/// change falls below `tol`. Terminal states have all-zero rows.
pub fn value_iteration(mdp: &Mdp, tol: f64, max_iters: usize) -> Vec<Vec<f64>> {
    let (n, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.discount());
    let mut v = vec![0.0; n];
    let mut q = vec![vec![0.0; na]; n];
    for _ in 0..max_iters {
        for (s, row) in q.iter_mut().enumerate() {
            for (a, qa) in row.iter_mut().enumerate() {
                *qa = if mdp.is_terminal(s) {
                    0.0
                } else {
                    let next: f64 = mdp.transition(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
                    mdp.reward(s, a) + g * next
                };
            }
        }
        let mut delta: f64 = 0.0;
        for (vs, row) in v.iter_mut().zip(&q) {
            let new_v = max_value(row);
            delta = delta.max((new_v - *vs).abs());
            *vs = new_v;
        }
        if delta < tol {
            break;
        }
    }
    q
}
