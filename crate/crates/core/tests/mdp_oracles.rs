mod common;

use rand::Rng;
use triad_core::mdp::{
    argmax, bellman_residual, make_gridworld, solve_policy_values, value_iteration, GridworldConfig, Policy,
};

#[test]
fn linear_solve_matches_iterative_evaluation() {
    let mut r = common::rng(1);
    for _ in 0..100 {
        let (n, a) = (r.gen_range(2..8), r.gen_range(1..4));
        let gamma = r.gen_range(0.0..0.95);
        let mdp = common::random_mdp(&mut r, n, a, gamma);
        let policy = common::random_policy(&mut r, n, a);
        let v = solve_policy_values(&mdp, &policy).unwrap();
        assert!(bellman_residual(&mdp, &policy, &v) < 1e-10);
        let oracle = common::evaluate_by_iteration(&mdp, &policy, 1e-13);
        for (x, y) in v.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn value_iteration_greedy_policy_is_self_consistent() {
    for (w, h) in [(1, 2), (3, 3), (5, 5)] {
        let env = make_gridworld(&GridworldConfig::new(w, h, 1.0, 0.0, 0.9)).unwrap();
        let mdp = env.oracle_mdp();
        let q = value_iteration(&mdp, 1e-13, 100_000);
        let greedy = Policy::deterministic(&q.iter().map(|row| argmax(row)).collect::<Vec<_>>(), 4).unwrap();
        let v = solve_policy_values(&mdp, &greedy).unwrap();
        for s in 0..mdp.n_states() {
            let best = q[s].iter().cloned().fold(f64::MIN, f64::max);
            assert!((v[s] - best).abs() < 1e-9, "{w}x{h} s{s}");
        }
        // the goal is Manhattan distance k away: optimal value γ^(k-1)
        let start_dist = (w - 1) + (h - 1);
        assert!((v[0] - 0.9f64.powi(start_dist as i32 - 1)).abs() < 1e-9);
    }
}

#[test]
fn gridworld_rows_are_distributions_and_goal_absorbs() {
    let cfg = GridworldConfig::new(4, 3, 5.0, -0.1, 0.99);
    let env = make_gridworld(&cfg).unwrap();
    let mdp = env.mdp();
    for s in 0..mdp.n_states() {
        for a in 0..4 {
            let total: f64 = mdp.transition(s, a).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
    assert!(mdp.is_terminal(cfg.goal()));
    // learners see clipped rewards, returns use the raw ones
    let mut r = common::rng(0);
    let step = env.step(cfg.goal() - 1, triad_core::mdp::RIGHT, &mut r);
    assert!(step.terminal);
    assert_eq!((step.reward, step.raw_reward), (1.0, 5.0));
}
