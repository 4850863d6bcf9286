use serde::{Deserialize, Serialize};

use super::Params;
use crate::{Error, Result};

/// Optimizer applying TD ascent directions. Directions are added, not
/// subtracted: `θ ← θ + step · g` for SGD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerSpec {
    Sgd {
        step: f64,
    },
    Adam {
        step: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        epsilon: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerSpec {
    pub fn sgd(step: f64) -> Self {
        OptimizerSpec::Sgd { step }
    }

    /// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn adam(step: f64) -> Self {
        OptimizerSpec::Adam { step, beta1: default_beta1(), beta2: default_beta2(), epsilon: default_eps() }
    }

    pub fn step(&self) -> f64 {
        match *self {
            OptimizerSpec::Sgd { step } | OptimizerSpec::Adam { step, .. } => step,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let step = self.step();
        if step <= 0.0 || !step.is_finite() {
            return Err(Error::config(format!("optimizer step {step} must be positive")));
        }
        if let OptimizerSpec::Adam { beta1, beta2, epsilon, .. } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || epsilon.is_nan() || epsilon <= 0.0 {
                return Err(Error::config("Adam needs β1, β2 in [0, 1) and ε > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    spec: OptimizerSpec,
    m: Vec<f64>,
    v: Vec<f64>,
    updates: u64,
}

impl OptimizerState {
    pub fn new(spec: OptimizerSpec, n_params: usize) -> Result<Self> {
        spec.validate()?;
        let moments = matches!(spec, OptimizerSpec::Adam { .. });
        let zeros = || if moments { vec![0.0; n_params] } else { Vec::new() };
        Ok(OptimizerState { spec, m: zeros(), v: zeros(), updates: 0 })
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Apply one ascent step along `direction`.
    ///
    /// A non-finite direction is rejected with [`Error::NonFinite`] and leaves
    /// both the parameters and the optimizer state untouched.
    pub fn apply(&mut self, params: &mut Params, direction: &[f64]) -> Result<()> {
        if direction.len() != params.len() {
            return Err(Error::ShapeMismatch { expected: params.len(), actual: direction.len() });
        }
        if direction.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite);
        }
        self.updates += 1;
        let theta = params.as_mut_slice();
        match self.spec {
            OptimizerSpec::Sgd { step } => {
                for (t, g) in theta.iter_mut().zip(direction) {
                    *t += step * g;
                }
            }
            OptimizerSpec::Adam { step, beta1, beta2, epsilon } => {
                let t = self.updates as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..theta.len() {
                    let g = direction[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    theta[i] += step * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_single_tvr_step() {
        let mut p = Params::from(vec![1.0]);
        let mut opt = OptimizerState::new(OptimizerSpec::sgd(0.01), 1).unwrap();
        opt.apply(&mut p, &[0.98]).unwrap();
        assert!((p[0] - 1.0098).abs() < 1e-15);
    }

    #[test]
    fn sgd_geometric_growth() {
        let mut p = Params::from(vec![1.0]);
        let mut opt = OptimizerState::new(OptimizerSpec::sgd(0.01), 1).unwrap();
        for _ in 0..500 {
            let g = (2.0 * 0.99 - 1.0) * p[0];
            opt.apply(&mut p, &[g]).unwrap();
        }
        let expected = 1.0098f64.powi(500);
        assert!(((p[0] - expected) / expected).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_direction_is_identity() {
        let mut p = Params::from(vec![0.5, -2.0, 3.25]);
        let before = p.clone();
        let mut opt = OptimizerState::new(OptimizerSpec::adam(1e-4), 3).unwrap();
        for _ in 0..1000 {
            opt.apply(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_is_sign_times_step() {
        let mut p = Params::from(vec![0.0, 0.0]);
        let mut opt = OptimizerState::new(OptimizerSpec::adam(1e-3), 2).unwrap();
        opt.apply(&mut p, &[4.0, -0.5]).unwrap();
        assert!((p[0] - 1e-3).abs() < 1e-9);
        assert!((p[1] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn non_finite_direction_is_skipped() {
        let mut p = Params::from(vec![1.0, 1.0]);
        let mut opt = OptimizerState::new(OptimizerSpec::adam(1e-3), 2).unwrap();
        assert!(matches!(opt.apply(&mut p, &[f64::NAN, 0.0]), Err(Error::NonFinite)));
        assert_eq!(p.as_slice(), &[1.0, 1.0]);
        assert_eq!(opt.updates(), 0);
    }

    #[test]
    fn rejects_bad_step() {
        assert!(OptimizerState::new(OptimizerSpec::sgd(0.0), 1).is_err());
        assert!(OptimizerState::new(OptimizerSpec::sgd(-1.0), 1).is_err());
    }
}
