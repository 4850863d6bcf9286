mod common;

use proptest::prelude::*;
use rand::Rng;
use triad_core::replay::{PrioritizedBuffer, ReplayConfig};

const TDS: [f64; 6] = [0.0, 0.1, 0.5, 1.0, 2.0, 4.0];

#[test]
fn draw_frequencies_match_priorities() {
    for (i, alpha) in [0.0, 0.5, 1.0, 2.0].into_iter().enumerate() {
        let freq = common::empirical_frequencies(&TDS, alpha, 1_000_000, 40 + i as u64);
        let p = common::analytic_probabilities(&TDS, alpha);
        for (k, (f, p)) in freq.iter().zip(&p).enumerate() {
            assert!((f - p).abs() < 0.01, "alpha {alpha} entry {k}: {f} vs {p}");
        }
    }
}

#[test]
fn unit_beta_zero_weights() {
    let mut buf = PrioritizedBuffer::new(ReplayConfig { min_fill: 0.1, ..ReplayConfig::new(100, 1.0, 0.0) }).unwrap();
    let mut r = common::rng(3);
    for i in 0..100 {
        buf.push(i, r.gen_range(-5.0..5.0));
    }
    for _ in 0..50 {
        assert!(buf.sample(16, &mut r).unwrap().weights.iter().all(|&w| w == 1.0));
    }
}

#[test]
fn interleaved_operations_keep_tree_consistent() {
    let mut buf = PrioritizedBuffer::new(ReplayConfig { min_fill: 0.01, ..ReplayConfig::new(1000, 0.7, 0.5) }).unwrap();
    let mut r = common::rng(17);
    let mut ids = Vec::new();
    for op in 0..100_000 {
        match r.gen_range(0..3) {
            0 | 1 => ids.push(buf.push(op, r.gen_range(-3.0..3.0))),
            _ => {
                if buf.can_sample() {
                    let b = buf.sample(8, &mut r).unwrap();
                    let picked = b.ids.clone();
                    let tds: Vec<f64> = picked.iter().map(|_| r.gen_range(-3.0..3.0)).collect();
                    buf.update_priorities(&picked, &tds);
                }
                // stale handles from long ago are ignored
                if ids.len() > 2_000 {
                    let old = ids[ids.len() - 2_000];
                    buf.update_priorities(&[old], &[100.0]);
                }
            }
        }
        if op % 997 == 0 {
            let (tree, brute) = (buf.total_mass(), buf.brute_force_mass());
            assert!((tree - brute).abs() <= 1e-9 * brute.max(1.0), "op {op}: {tree} vs {brute}");
        }
    }
    assert_eq!(buf.len(), 1000);
    assert!(buf.tree_depth() <= 11);
}

proptest! {
    #[test]
    fn probabilities_sum_to_one(tds in prop::collection::vec(-10.0f64..10.0, 1..64), alpha in 0.0f64..3.0) {
        let mut buf = PrioritizedBuffer::new(ReplayConfig::new(64, alpha, 0.4)).unwrap();
        let ids: Vec<_> = tds.iter().map(|&d| buf.push((), d)).collect();
        let total: f64 = ids.iter().map(|&id| buf.probability(id).unwrap()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        let expect = common::analytic_probabilities(&tds, alpha);
        for (id, p) in ids.iter().zip(expect) {
            prop_assert!((buf.probability(*id).unwrap() - p).abs() < 1e-9);
        }
    }

    #[test]
    fn weights_are_positive_and_bounded_by_one_when_normalized(
        tds in prop::collection::vec(-10.0f64..10.0, 4..64),
        beta in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let cfg = ReplayConfig { normalize_weights: true, min_fill: 0.01, ..ReplayConfig::new(64, 1.0, beta) };
        let mut buf = PrioritizedBuffer::new(cfg).unwrap();
        for &d in &tds {
            buf.push((), d);
        }
        let b = buf.sample(8, &mut common::rng(seed)).unwrap();
        prop_assert!(b.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
    }
}
