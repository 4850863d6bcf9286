//! n-step returns and the four bootstrap-target rules.
//!
//! With `q` the online network and `q'` the target copy:
//!
//! | rule              | bootstrap value               |
//! |-------------------|-------------------------------|
//! | `Q`               | `max_a q(s, a)`               |
//! | `TargetQ`         | `max_a q'(s, a)`              |
//! | `InverseDoubleQ`  | `q(s, argmax_a q'(s, a))`     |
//! | `DoubleQ`         | `q'(s, argmax_a q(s, a))`     |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::mdp::{argmax, clip_reward};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BootstrapKind {
    Q,
    TargetQ,
    InverseDoubleQ,
    DoubleQ,
}

impl BootstrapKind {
    pub const ALL: [BootstrapKind; 4] =
        [BootstrapKind::Q, BootstrapKind::TargetQ, BootstrapKind::InverseDoubleQ, BootstrapKind::DoubleQ];

    pub fn label(self) -> &'static str {
        match self {
            BootstrapKind::Q => "q",
            BootstrapKind::TargetQ => "target-q",
            BootstrapKind::InverseDoubleQ => "inverse-double-q",
            BootstrapKind::DoubleQ => "double-q",
        }
    }

    /// Whether the rule reads the target network at all.
    pub fn uses_target(self) -> bool {
        !matches!(self, BootstrapKind::Q)
    }
}

impl fmt::Display for BootstrapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for BootstrapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BootstrapKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| Error::config(format!("unknown bootstrap rule {s:?}")))
    }
}

/// Bootstrap target kind plus the number of reward steps before bootstrapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BootstrapRule {
    pub kind: BootstrapKind,
    pub n: usize,
}

impl BootstrapRule {
    pub fn new(kind: BootstrapKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("bootstrap length n must be at least 1"));
        }
        Ok(BootstrapRule { kind, n })
    }
}

/// `v(s)` under `kind`, given the online and target action values at `s`.
pub fn bootstrap_value(kind: BootstrapKind, q_online: &[f64], q_target: &[f64]) -> f64 {
    match kind {
        BootstrapKind::Q => q_online[argmax(q_online)],
        BootstrapKind::TargetQ => q_target[argmax(q_target)],
        BootstrapKind::InverseDoubleQ => q_online[argmax(q_target)],
        BootstrapKind::DoubleQ => q_target[argmax(q_online)],
    }
}

/// A stored window of experience: `(S_t, A_t)`, the clipped rewards
/// `R_{t+1..t+m}` and the state `S_{t+m}` to bootstrap from.
///
/// `m` (the number of rewards) is at most `n`; it is shorter when the episode
/// ended or was truncated inside the window.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSegment {
    pub state: usize,
    pub action: usize,
    rewards: Vec<f64>,
    pub bootstrap_state: usize,
    /// The episode terminated at `S_{t+m}`, so no bootstrap term is added.
    pub terminated: bool,
}

impl TransitionSegment {
    /// Rewards are clipped to `[-1, 1]` on construction.
    pub fn new(state: usize, action: usize, rewards: &[f64], bootstrap_state: usize, terminated: bool) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::Empty("segment rewards"));
        }
        Ok(TransitionSegment {
            state,
            action,
            rewards: rewards.iter().map(|&r| clip_reward(r)).collect(),
            bootstrap_state,
            terminated,
        })
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// `Σ_{i=1..m} γ^{i-1} R_{t+i}`.
    pub fn discounted_rewards(&self, gamma: f64) -> f64 {
        let mut g = 0.0;
        let mut discount = 1.0;
        for r in &self.rewards {
            g += discount * r;
            discount *= gamma;
        }
        g
    }

    /// `γ^m` when the segment bootstraps, zero when it terminated.
    pub fn bootstrap_discount(&self, gamma: f64) -> f64 {
        if self.terminated {
            0.0
        } else {
            gamma.powi(self.rewards.len() as i32)
        }
    }
}

/// `G = Σ γ^{i-1} R_{t+i} + [not terminated] γ^m v(S_{t+m})`.
///
/// `q_online` and `q_target` are the action values at the segment's bootstrap
/// state. They are ignored for terminated segments.
pub fn n_step_return(
    segment: &TransitionSegment,
    kind: BootstrapKind,
    q_online: &[f64],
    q_target: &[f64],
    gamma: f64,
) -> f64 {
    let g = segment.discounted_rewards(gamma);
    if segment.terminated {
        g
    } else {
        g + segment.bootstrap_discount(gamma) * bootstrap_value(kind, q_online, q_target)
    }
}

/// `δ = G - q(S_t, A_t)`.
pub fn td_error(ret: f64, q_sa: f64) -> f64 {
    ret - q_sa
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use BootstrapKind::*;

    #[test]
    fn four_rules_by_hand() {
        let (q, qt) = ([1.0, 5.0], [4.0, 2.0]);
        assert_eq!(bootstrap_value(Q, &q, &qt), 5.0);
        assert_eq!(bootstrap_value(TargetQ, &q, &qt), 4.0);
        assert_eq!(bootstrap_value(InverseDoubleQ, &q, &qt), 1.0);
        assert_eq!(bootstrap_value(DoubleQ, &q, &qt), 2.0);
    }

    #[test]
    fn equal_networks_agree() {
        for k in BootstrapKind::ALL {
            assert_eq!(bootstrap_value(k, &[1.0, 5.0], &[1.0, 5.0]), 5.0);
        }
    }

    #[test]
    fn single_action_collapses_selection() {
        let (q, qt) = ([7.0], [3.0]);
        assert_eq!(bootstrap_value(Q, &q, &qt), 7.0);
        assert_eq!(bootstrap_value(TargetQ, &q, &qt), 3.0);
        assert_eq!(bootstrap_value(InverseDoubleQ, &q, &qt), 7.0);
        assert_eq!(bootstrap_value(DoubleQ, &q, &qt), 3.0);
    }

    #[test]
    fn three_step_return() {
        let seg = TransitionSegment::new(0, 0, &[1.0, 1.0, 1.0], 1, false).unwrap();
        let g = n_step_return(&seg, Q, &[4.0], &[4.0], 0.5);
        assert_eq!(g, 1.0 + 0.5 + 0.25 + 0.125 * 4.0);
    }

    #[test]
    fn one_step_return_clips_reward() {
        let seg = TransitionSegment::new(0, 0, &[2.0], 1, false).unwrap();
        assert_eq!(seg.rewards(), &[1.0]);
        let g = n_step_return(&seg, TargetQ, &[0.0], &[10.0], 0.9);
        assert!((g - 10.0).abs() < 1e-12);
    }

    #[test]
    fn terminal_zero_reward_segment() {
        let seg = TransitionSegment::new(0, 0, &[0.0, 0.0], 1, true).unwrap();
        assert_eq!(n_step_return(&seg, Q, &[1e9], &[1e9], 0.99), 0.0);
    }

    #[test]
    fn td_errors() {
        assert_eq!(td_error(2.25, 2.25), 0.0);
        assert_eq!(td_error(11.0, 10.0), 1.0);
        assert_eq!(td_error(0.0, -3.0), 3.0);
    }

    #[test]
    fn rejects_empty_segment_and_zero_n() {
        assert!(TransitionSegment::new(0, 0, &[], 1, false).is_err());
        assert!(BootstrapRule::new(Q, 0).is_err());
    }

    #[test]
    fn labels_parse_back() {
        for k in BootstrapKind::ALL {
            assert_eq!(k.label().parse::<BootstrapKind>().unwrap(), k);
        }
    }

    fn values() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-50.0f64..50.0, 1..6)
    }

    proptest! {
        #[test]
        fn one_step_matches_formula(r in -3.0f64..3.0, gamma in 0.0f64..0.999, q in values(), qt_seed in values()) {
            let qt: Vec<f64> = q.iter().zip(qt_seed.iter().cycle()).map(|(a, b)| a + b).collect();
            let seg = TransitionSegment::new(0, 0, &[r], 0, false).unwrap();
            for k in BootstrapKind::ALL {
                let expected = r.clamp(-1.0, 1.0) + gamma * bootstrap_value(k, &q, &qt);
                prop_assert_eq!(n_step_return(&seg, k, &q, &qt, gamma), expected);
            }
        }

        #[test]
        fn swapping_networks_mirrors_double_rules(q in values(), qt_seed in values()) {
            let qt: Vec<f64> = q.iter().zip(qt_seed.iter().cycle()).map(|(a, b)| a * b).collect();
            prop_assert_eq!(bootstrap_value(DoubleQ, &q, &qt), bootstrap_value(InverseDoubleQ, &qt, &q));
            prop_assert_eq!(bootstrap_value(Q, &q, &qt), bootstrap_value(TargetQ, &qt, &q));
        }

        #[test]
        fn q_rule_dominates_every_action(q in values(), qt in values()) {
            let v = bootstrap_value(Q, &q, &qt);
            prop_assert!(q.iter().all(|&x| v >= x));
        }
    }
}
