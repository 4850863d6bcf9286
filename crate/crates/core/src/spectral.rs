//! Expected-update analysis of linear TD under an arbitrary state weighting.
//!
//! For features Φ (`n × d`), weighting `D = diag(d_s)` and the policy's
//! state-transition matrix `P_π`, the expected semi-gradient TD(0) step is
//! `w ← w + η (A w + b)` with
//!
//! ```text
//! A = Φᵀ D (γ P_π − I) Φ
//! ```
//!
//! The sign of the real parts of A's eigenvalues decides small-step
//! stability; for a finite step the discrete map `I + η A` must also be a
//! contraction.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::mdp::{make_baird, make_tvr, FeatureMap, Mdp, Policy};
use crate::{Error, Result};

pub const STABILITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedUpdateOperator {
    matrix: DMatrix<f64>,
    features: DMatrix<f64>,
    weighting: Vec<f64>,
    policy_transition: DMatrix<f64>,
    gamma: f64,
}

impl ExpectedUpdateOperator {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn weighting(&self) -> &[f64] {
        &self.weighting
    }

    /// Rebuild `Φᵀ D (γ P_π − I) Φ` from the stored construction inputs.
    pub fn recompute(&self) -> DMatrix<f64> {
        assemble(&self.features, &self.weighting, &self.policy_transition, self.gamma)
    }

    /// One expected update `w + step · A w`.
    pub fn step(&self, w: &DVector<f64>, step: f64) -> DVector<f64> {
        w + &self.matrix * w * step
    }
}

fn assemble(phi: &DMatrix<f64>, weighting: &[f64], p: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let n = phi.nrows();
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(weighting));
    let m = p * gamma - DMatrix::identity(n, n);
    phi.transpose() * d * m * phi
}

/// Build the expected-update operator. Terminal states contribute no
/// bootstrap term (their rows of `P_π` are zero).
pub fn build_operator(
    mdp: &Mdp,
    policy: &Policy,
    weighting: &[f64],
    features: &FeatureMap,
) -> Result<ExpectedUpdateOperator> {
    let n = mdp.n_states();
    if weighting.len() != n {
        return Err(Error::ShapeMismatch { expected: n, actual: weighting.len() });
    }
    if features.n_states() != n {
        return Err(Error::ShapeMismatch { expected: n, actual: features.n_states() });
    }
    if policy.n_states() != n || policy.n_actions() != mdp.n_actions() {
        return Err(Error::config("policy does not match the MDP"));
    }
    if weighting.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::config("state weighting must be finite and non-negative"));
    }
    if weighting.iter().all(|&x| x == 0.0) {
        return Err(Error::config("state weighting is all zero"));
    }
    let phi = features.matrix();
    let p = mdp.policy_transition(policy);
    let matrix = assemble(&phi, weighting, &p, mdp.discount());
    Ok(ExpectedUpdateOperator {
        matrix,
        features: phi,
        weighting: weighting.to_vec(),
        policy_transition: p,
        gamma: mdp.discount(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Divergent,
    Convergent,
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub verdict: Verdict,
    pub eigenvalues: Vec<Eigenvalue>,
    pub max_real_part: f64,
    /// Spectral radius of `I + step · A`.
    pub step_spectral_radius: f64,
    pub step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// Classify the expected dynamics `w ← w + step · A w`.
///
/// Divergent iff some eigenvalue has real part above [`STABILITY_TOL`];
/// convergent iff every real part is below `-STABILITY_TOL` and
/// `ρ(I + step·A) < 1`; marginal otherwise.
pub fn classify_stability(op: &ExpectedUpdateOperator, step: f64) -> Result<StabilityReport> {
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::config(format!("step {step} must be positive")));
    }
    let d = op.dim();
    let eig = if op.matrix.iter().all(|x| x.is_finite()) {
        op.matrix.clone().try_schur(1e-14, 10_000).map(|s| s.complex_eigenvalues())
    } else {
        None
    };
    let Some(eig) = eig else {
        return Ok(StabilityReport {
            verdict: Verdict::Marginal,
            eigenvalues: Vec::new(),
            max_real_part: f64::NAN,
            step_spectral_radius: f64::NAN,
            step,
            diagnostic: Some(format!("eigen-solver failed on {d}x{d} operator")),
        });
    };
    let mut eigenvalues: Vec<Eigenvalue> = eig.iter().map(|c| Eigenvalue { re: c.re, im: c.im }).collect();
    eigenvalues.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    let max_real_part = eigenvalues.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
    let step_spectral_radius = eig
        .iter()
        .map(|c| (Complex::new(1.0, 0.0) + c * step).norm())
        .fold(0.0, f64::max);
    let verdict = if max_real_part > STABILITY_TOL {
        Verdict::Divergent
    } else if max_real_part < -STABILITY_TOL && step_spectral_radius < 1.0 {
        Verdict::Convergent
    } else {
        Verdict::Marginal
    };
    Ok(StabilityReport { verdict, eigenvalues, max_real_part, step_spectral_radius, step, diagnostic: None })
}

/// Iterate the expected update from `w0` and return the final weights.
pub fn simulate_expected(op: &ExpectedUpdateOperator, w0: &[f64], step: f64, steps: usize) -> Vec<f64> {
    let mut w = DVector::from_column_slice(w0);
    for _ in 0..steps {
        w = op.step(&w, step);
    }
    w.iter().copied().collect()
}

/// Expected linear TD where bootstrap values come from a frozen copy of the
/// weights synced every `sync_period` steps:
/// `w ← w + η Φᵀ D (γ P_π Φ w' − Φ w)`.
///
/// Returns the weight norm after every step (index 0 is the initial norm).
#[allow(clippy::too_many_arguments)]
pub fn simulate_target_network(
    mdp: &Mdp,
    policy: &Policy,
    weighting: &[f64],
    features: &FeatureMap,
    w0: &[f64],
    step: f64,
    sync_period: usize,
    steps: usize,
) -> Result<Vec<f64>> {
    if sync_period == 0 {
        return Err(Error::config("sync period must be positive"));
    }
    let phi = features.matrix();
    if w0.len() != phi.ncols() {
        return Err(Error::ShapeMismatch { expected: phi.ncols(), actual: w0.len() });
    }
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(weighting));
    let p = mdp.policy_transition(policy);
    let pull = phi.transpose() * &d * &p * &phi * mdp.discount();
    let self_term = phi.transpose() * &d * &phi;
    let mut w = DVector::from_column_slice(w0);
    let mut frozen = w.clone();
    let mut norms = Vec::with_capacity(steps + 1);
    norms.push(w.norm());
    for t in 1..=steps {
        w = &w + (&pull * &frozen - &self_term * &w) * step;
        if t % sync_period == 0 {
            frozen = w.clone();
        }
        norms.push(w.norm());
    }
    Ok(norms)
}

/// Stationary distribution of a row-stochastic matrix, from
/// `(Pᵀ − I) d = 0` with one equation replaced by `Σ d = 1`.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = p.nrows();
    let mut m = p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let d = m.lu().solve(&rhs).ok_or(Error::Singular)?;
    Ok(d.iter().copied().collect())
}

/// A named stability problem: MDP, evaluated policy, state weighting,
/// features and a step size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityProblem {
    pub name: String,
    pub mdp: Mdp,
    pub policy: Policy,
    pub weighting: Vec<f64>,
    pub features: FeatureMap,
    pub step: f64,
    /// Initial weights for simulation; defaults to all ones.
    #[serde(default)]
    pub w0: Option<Vec<f64>>,
}

impl StabilityProblem {
    pub fn operator(&self) -> Result<ExpectedUpdateOperator> {
        build_operator(&self.mdp, &self.policy, &self.weighting, &self.features)
    }

    pub fn classify(&self) -> Result<StabilityReport> {
        classify_stability(&self.operator()?, self.step)
    }

    pub fn initial_weights(&self) -> Vec<f64> {
        self.w0.clone().unwrap_or_else(|| vec![1.0; self.features.dim()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TvrWeighting {
    /// Update only `s1`.
    S1Only,
    /// Update both states equally often.
    Equal,
    /// The on-policy (stationary) distribution, all mass on `s2`.
    OnPolicy,
}

impl TvrWeighting {
    pub fn weights(self) -> [f64; 2] {
        match self {
            TvrWeighting::S1Only => [1.0, 0.0],
            TvrWeighting::Equal => [1.0, 1.0],
            TvrWeighting::OnPolicy => [0.0, 1.0],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TvrWeighting::S1Only => "s1-only",
            TvrWeighting::Equal => "equal",
            TvrWeighting::OnPolicy => "on-policy",
        }
    }
}

pub fn tvr_problem(gamma: f64, weighting: TvrWeighting, step: f64) -> Result<StabilityProblem> {
    let tvr = make_tvr(gamma, false)?;
    Ok(StabilityProblem {
        name: format!("tvr/{}/gamma={gamma}", weighting.label()),
        mdp: tvr.mdp,
        policy: Policy::uniform(2, 1),
        weighting: weighting.weights().to_vec(),
        features: tvr.features,
        step,
        w0: Some(vec![1.0]),
    })
}

/// Baird's star evaluated for the always-solid target policy under uniform
/// state weighting.
pub fn baird_problem(gamma: f64, step: f64) -> Result<StabilityProblem> {
    let (mdp, features) = make_baird(gamma)?;
    Ok(StabilityProblem {
        name: format!("baird/uniform/gamma={gamma}"),
        policy: Policy::deterministic(&[1; 7], 2)?,
        mdp,
        weighting: vec![1.0 / 7.0; 7],
        features,
        step,
        w0: Some(vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 10.0, 1.0]),
    })
}

/// The counterexample catalogue: the four TVR cells (s1-only and equal
/// weighting at a divergent and a convergent discount), TVR under on-policy
/// weighting, and Baird's star.
pub fn catalogue() -> Result<Vec<StabilityProblem>> {
    Ok(vec![
        tvr_problem(0.99, TvrWeighting::S1Only, 0.01)?,
        tvr_problem(0.4, TvrWeighting::S1Only, 0.01)?,
        tvr_problem(0.9, TvrWeighting::Equal, 0.01)?,
        tvr_problem(0.8, TvrWeighting::Equal, 0.01)?,
        tvr_problem(0.99, TvrWeighting::OnPolicy, 0.01)?,
        baird_problem(0.99, 0.01)?,
    ])
}
