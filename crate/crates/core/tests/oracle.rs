//! Kernels against the brute-force oracles.

use mcmma::align::{expected_alignment, one_hot_start, SelectionProbabilities};
use mcmma::checks::{self, CheckRow, OracleGrid};
use mcmma::decode::{DecodePolicy, ForcedPosition};
use mcmma::oracle::{alpha_by_enumeration, enumerate_paths, monte_carlo_hsd};
use mcmma::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn oracle_grid_agrees() {
    let grid = OracleGrid {
        seeds: 10,
        ..OracleGrid::default()
    };
    for row in checks::oracle_equivalence(&grid).unwrap() {
        assert!(row.passed(), "{row:?}");
    }
}

#[test]
fn path_probabilities_total_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let t = rng.random_range(1..=7);
        let l = rng.random_range(1..=4);
        let p = Matrix::from_fn(l, t, |_, _| rng.random::<f64>());
        let total: f64 = enumerate_paths(&p, &one_hot_start(t)).unwrap().iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12, "{total}");
    }
}

#[test]
fn enumeration_with_partial_initial_mass() {
    let p = Matrix::from_rows(&[vec![0.3, 0.6, 0.5], vec![0.2, 0.7, 0.4]]).unwrap();
    let alpha0 = [0.2, 0.5, 0.1];
    let fast = expected_alignment(&SelectionProbabilities::new(p.clone(), 0).unwrap(), &alpha0).unwrap();
    let slow = alpha_by_enumeration(&p, &alpha0).unwrap();
    assert!(fast.values().max_abs_diff(slow.values()).unwrap() < 1e-12);
}

// With one output step and ε = 0, every idle head is forced onto the first
// activated frame, which is exactly the event δ̂ describes. The empirical
// frequencies of the hard decoder must then match δ̂ up to sampling noise.
#[test]
fn delta_is_exact_for_one_step_at_zero_wait() {
    for (m, seed) in [(2, 1u64), (3, 2)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<Matrix> = (0..m)
            .map(|_| Matrix::from_fn(1, 6, |_, _| rng.random_range(0.05..0.6)))
            .collect();
        for forced_position in [ForcedPosition::RightmostSelected, ForcedPosition::RightBound] {
            let policy = DecodePolicy {
                forced_position,
                ..DecodePolicy::with_epsilon(0)
            };
            let report = monte_carlo_hsd(&p, &policy, 100_000, seed).unwrap();
            // Standard error of a frequency is at most 0.5 / sqrt(1e5) ≈ 1.6e-3.
            assert!(report.divergence_from_delta < 8e-3, "M={m}: {}", report.divergence_from_delta);
        }
    }
}

#[test]
fn monte_carlo_invariants() {
    for row in checks::hsd_invariants(&[2, 3], &[0, 1, 3], 5_000, 9).unwrap() {
        assert!(row.passed(), "{row:?}");
    }
}

#[test]
fn normalization_and_reductions() {
    let rows: Vec<CheckRow> = checks::normalization(300, 4)
        .unwrap()
        .into_iter()
        .chain(checks::degenerate_reductions(300, 4).unwrap())
        .collect();
    for row in rows {
        assert!(row.passed(), "{row:?}");
    }
}
