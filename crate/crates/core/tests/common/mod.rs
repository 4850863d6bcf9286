//! Independent oracles shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use triad_core::approx::{Approximator, ApproximatorKind, Capacity, Params};
use triad_core::mdp::{FeatureMap, Mdp, Policy};
use triad_core::replay::{PrioritizedBuffer, ReplayConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_distribution(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

pub fn random_mdp(rng: &mut impl Rng, n_states: usize, n_actions: usize, gamma: f64) -> Mdp {
    let transition = (0..n_states)
        .map(|_| (0..n_actions).map(|_| random_distribution(rng, n_states)).collect())
        .collect();
    let reward = (0..n_states).map(|_| (0..n_actions).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    Mdp::new(transition, reward, gamma, vec![false; n_states]).unwrap()
}

pub fn random_policy(rng: &mut impl Rng, n_states: usize, n_actions: usize) -> Policy {
    Policy::from_rows((0..n_states).map(|_| random_distribution(rng, n_actions)).collect()).unwrap()
}

/// Iterative policy evaluation to a fixed point.
pub fn evaluate_by_iteration(mdp: &Mdp, policy: &Policy, tol: f64) -> Vec<f64> {
    let n = mdp.n_states();
    let mut v = vec![0.0; n];
    loop {
        let mut next = vec![0.0; n];
        for s in 0..n {
            if mdp.is_terminal(s) {
                continue;
            }
            for (a, &pa) in policy.action_probs(s).iter().enumerate() {
                let ev: f64 = mdp.transition(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
                next[s] += pa * (mdp.reward(s, a) + mdp.discount() * ev);
            }
        }
        let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if diff < tol {
            return v;
        }
    }
}

/// `‖g − g_fd‖ / max(‖g‖, ‖g_fd‖)` over up to `max_coords` sampled
/// coordinates, with central differences of step `h`.
pub fn gradient_relative_error(
    approx: &Approximator,
    params: &Params,
    state: usize,
    action: usize,
    h: f64,
    max_coords: usize,
    rng: &mut impl Rng,
) -> f64 {
    let g = approx.gradient(params, state, action).unwrap();
    let n = params.len();
    let coords: Vec<usize> = if n <= max_coords { (0..n).collect() } else { sample(rng, n, max_coords).into_vec() };
    let mut p = params.clone();
    let (mut diff2, mut a2, mut f2) = (0.0, 0.0, 0.0);
    for i in coords {
        let orig = p[i];
        p[i] = orig + h;
        let up = approx.value(&p, state, action).unwrap();
        p[i] = orig - h;
        let down = approx.value(&p, state, action).unwrap();
        p[i] = orig;
        let fd = (up - down) / (2.0 * h);
        diff2 += (g[i] - fd).powi(2);
        a2 += g[i] * g[i];
        f2 += fd * fd;
    }
    diff2.sqrt() / a2.sqrt().max(f2.sqrt()).max(1e-300)
}

/// Worst relative gradient error of an MLP of the given width over a few
/// random states and actions.
pub fn mlp_gradient_error(capacity: Capacity, seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n_states, dim, n_actions) = (5, 8, 4);
    let rows = (0..n_states).map(|_| (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    let features = FeatureMap::new(rows).unwrap();
    let approx = Approximator::new(ApproximatorKind::mlp(capacity), features, n_actions).unwrap();
    let mut params = approx.init_params(&mut r);
    // non-zero biases so every term of the backward pass is exercised
    for x in params.iter_mut() {
        *x += r.gen_range(-0.05..0.05);
    }
    let mut worst: f64 = 0.0;
    for k in 0..4 {
        let (s, a) = (k % n_states, (k * 3 + 1) % n_actions);
        worst = worst.max(gradient_relative_error(&approx, &params, s, a, 1e-6, 3_000, &mut r));
    }
    worst
}

/// Analytic sampling probabilities `(|δ| + 1e-6)^α / Σ`.
pub fn analytic_probabilities(tds: &[f64], alpha: f64) -> Vec<f64> {
    let masses: Vec<f64> = tds.iter().map(|d| (d.abs() + 1e-6).powf(alpha)).collect();
    let total: f64 = masses.iter().sum();
    masses.iter().map(|m| m / total).collect()
}

/// Empirical draw frequencies per pushed item.
pub fn empirical_frequencies(tds: &[f64], alpha: f64, draws: usize, seed: u64) -> Vec<f64> {
    let mut buf = PrioritizedBuffer::new(ReplayConfig { min_fill: 1.0, ..ReplayConfig::new(tds.len(), alpha, 0.0) }).unwrap();
    for (i, &d) in tds.iter().enumerate() {
        buf.push(i, d);
    }
    let mut r = rng(seed);
    let mut counts = vec![0usize; tds.len()];
    let batch = 32;
    for _ in 0..draws / batch {
        let b = buf.sample(batch, &mut r).unwrap();
        for &&i in &b.entries {
            counts[i] += 1;
        }
    }
    let total = (draws / batch * batch) as f64;
    counts.iter().map(|&c| c as f64 / total).collect()
}
