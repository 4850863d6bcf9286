//! Parameterized action-value functions of graded capacity.
//!
//! Every family maps `(state, action)` to a scalar and exposes the exact
//! gradient of that scalar with respect to its flat parameter vector. State
//! values are the single-action special case.

mod mlp;
mod optim;
mod params;

pub use mlp::MlpLayout;
pub use optim::{OptimizerSpec, OptimizerState};
pub use params::Params;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::FeatureMap;
use crate::{Error, Result};

/// Hidden-layer width ladder for the MLP family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Capacity {
    Small,
    Medium,
    Large,
    ExtraLarge,
}

impl Capacity {
    pub const ALL: [Capacity; 4] = [Capacity::Small, Capacity::Medium, Capacity::Large, Capacity::ExtraLarge];

    pub fn width(self) -> usize {
        match self {
            Capacity::Small => 64,
            Capacity::Medium => 128,
            Capacity::Large => 256,
            Capacity::ExtraLarge => 512,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Capacity::Small => "small",
            Capacity::Medium => "medium",
            Capacity::Large => "large",
            Capacity::ExtraLarge => "extra-large",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ApproximatorKind {
    /// One independent entry per state-action pair.
    Tabular,
    /// `q(s, a) = θ_aᵀ φ(s)`.
    Linear,
    /// `q(s, a) = w_aᵀ (φ(s) + u_a)`. With `learn_offset` unset, `u` stays at
    /// its initial value and receives zero gradient.
    FactoredAffine {
        #[serde(default = "yes")]
        learn_offset: bool,
    },
    /// ReLU feed-forward network over `φ(s)` with a linear head, one output
    /// per action.
    Mlp { hidden: Vec<usize> },
}

fn yes() -> bool {
    true
}

impl ApproximatorKind {
    /// Two hidden layers of the capacity's width.
    pub fn mlp(capacity: Capacity) -> Self {
        ApproximatorKind::Mlp { hidden: vec![capacity.width(); 2] }
    }

    pub fn label(&self) -> String {
        match self {
            ApproximatorKind::Tabular => "tabular".into(),
            ApproximatorKind::Linear => "linear".into(),
            ApproximatorKind::FactoredAffine { .. } => "factored-affine".into(),
            ApproximatorKind::Mlp { hidden } => {
                let w = hidden.first().copied().unwrap_or(0);
                match Capacity::ALL.iter().find(|c| c.width() == w && hidden.len() == 2) {
                    Some(c) => c.label().into(),
                    None => format!(
                        "mlp-{}",
                        hidden.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
                    ),
                }
            }
        }
    }
}

/// A value-function family bound to a state space (through its features) and
/// an action count.
#[derive(Debug, Clone)]
pub struct Approximator {
    kind: ApproximatorKind,
    features: FeatureMap,
    n_actions: usize,
    mlp: Option<MlpLayout>,
    n_params: usize,
}

impl Approximator {
    pub fn new(kind: ApproximatorKind, features: FeatureMap, n_actions: usize) -> Result<Self> {
        if n_actions == 0 {
            return Err(Error::config("approximator needs at least one action"));
        }
        let d = features.dim();
        let (mlp, n_params) = match &kind {
            ApproximatorKind::Tabular => (None, features.n_states() * n_actions),
            ApproximatorKind::Linear => (None, d * n_actions),
            ApproximatorKind::FactoredAffine { .. } => (None, 2 * d * n_actions),
            ApproximatorKind::Mlp { hidden } => {
                if hidden.is_empty() || hidden.contains(&0) {
                    return Err(Error::config("MLP hidden widths must be non-empty and positive"));
                }
                let layout = MlpLayout::new(d, hidden, n_actions);
                let n = layout.n_params();
                (Some(layout), n)
            }
        };
        Ok(Approximator { kind, features, n_actions, mlp, n_params })
    }

    pub fn kind(&self) -> &ApproximatorKind {
        &self.kind
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn n_states(&self) -> usize {
        self.features.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Zeros for the tabular and linear families; He-uniform weights with zero
    /// biases for the MLP.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Params {
        match &self.mlp {
            Some(layout) => layout.init(rng),
            None => Params::zeros(self.n_params),
        }
    }

    fn check(&self, params: &Params, state: usize, action: Option<usize>) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::ShapeMismatch { expected: self.n_params, actual: params.len() });
        }
        if state >= self.n_states() {
            return Err(Error::ShapeMismatch { expected: self.n_states(), actual: state });
        }
        if let Some(a) = action {
            if a >= self.n_actions {
                return Err(Error::ShapeMismatch { expected: self.n_actions, actual: a });
            }
        }
        Ok(())
    }

    pub fn value(&self, params: &Params, state: usize, action: usize) -> Result<f64> {
        self.check(params, state, Some(action))?;
        let p = params.as_slice();
        let phi = self.features.row(state);
        let d = phi.len();
        Ok(match &self.kind {
            ApproximatorKind::Tabular => p[state * self.n_actions + action],
            ApproximatorKind::Linear => dot(&p[action * d..(action + 1) * d], phi),
            ApproximatorKind::FactoredAffine { .. } => {
                let base = action * 2 * d;
                affine(&p[base..base + d], &p[base + d..base + 2 * d], phi)
            }
            ApproximatorKind::Mlp { .. } => {
                let layout = self.mlp.as_ref().expect("mlp layout");
                layout.forward(p, phi).output()[action]
            }
        })
    }

    /// All action values at `state`.
    pub fn values(&self, params: &Params, state: usize) -> Result<Vec<f64>> {
        self.check(params, state, None)?;
        match &self.mlp {
            Some(layout) => Ok(layout.forward(params.as_slice(), self.features.row(state)).output().to_vec()),
            None => (0..self.n_actions).map(|a| self.value(params, state, a)).collect(),
        }
    }

    /// `∇θ q(state, action)`.
    pub fn gradient(&self, params: &Params, state: usize, action: usize) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.n_params];
        self.accumulate_gradient(params, state, action, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// `grad += scale · ∇θ q(state, action)`.
    pub fn accumulate_gradient(
        &self,
        params: &Params,
        state: usize,
        action: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        self.check(params, state, Some(action))?;
        if grad.len() != self.n_params {
            return Err(Error::ShapeMismatch { expected: self.n_params, actual: grad.len() });
        }
        let p = params.as_slice();
        let phi = self.features.row(state);
        let d = phi.len();
        match &self.kind {
            ApproximatorKind::Tabular => grad[state * self.n_actions + action] += scale,
            ApproximatorKind::Linear => {
                for (g, x) in grad[action * d..(action + 1) * d].iter_mut().zip(phi) {
                    *g += scale * x;
                }
            }
            ApproximatorKind::FactoredAffine { learn_offset } => {
                let base = action * 2 * d;
                let (w, u) = p[base..base + 2 * d].split_at(d);
                let (gw, gu) = grad[base..base + 2 * d].split_at_mut(d);
                for i in 0..d {
                    gw[i] += scale * (phi[i] + u[i]);
                    if *learn_offset {
                        gu[i] += scale * w[i];
                    }
                }
            }
            ApproximatorKind::Mlp { .. } => {
                let layout = self.mlp.as_ref().expect("mlp layout");
                let pass = layout.forward(p, phi);
                layout.backward(p, &pass, action, scale, grad);
            }
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn affine(w: &[f64], u: &[f64], phi: &[f64]) -> f64 {
    w.iter().zip(phi.iter().zip(u)).map(|(w, (x, u))| w * (x + u)).sum()
}

/// Copy of the online parameters for bootstrapping. Later online updates leave
/// the copy untouched.
pub fn sync_target(online: &Params) -> Params {
    online.clone()
}
