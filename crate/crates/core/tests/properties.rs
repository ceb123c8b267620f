//! Structural properties of the expectations on random inputs.

use mcmma::align::{
    chunk_attention, constrain, expected_alignment, expected_alignment_with, one_hot_start,
    AlignmentDistribution, AlphaKernel, ConstraintConfig, ConstraintMode, SelectionProbabilities,
};
use mcmma::toy::{
    gen_synthetic, toy_forward, ForwardOptions, ModelConfig, SyntheticTask, ToyModelParams, TrainMode,
};
use mcmma::Matrix;
use proptest::prelude::*;

fn matrix(l: usize, t: usize, lo: f64, hi: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(lo..hi, l * t).prop_map(move |v| Matrix::from_fn(l, t, |i, j| v[i * t + j]))
}

fn layer() -> impl Strategy<Value = (Vec<Matrix>, usize)> {
    (1usize..4, 1usize..5, 1usize..9).prop_flat_map(|(m, l, t)| {
        (prop::collection::vec(matrix(l, t, 0.0, 1.0), m), 0usize..=t + 1)
    })
}

fn alphas(p: &[Matrix]) -> Vec<AlignmentDistribution> {
    p.iter()
        .enumerate()
        .map(|(m, p)| {
            let p = SelectionProbabilities::new(p.clone(), m).unwrap();
            expected_alignment(&p, &one_hot_start(p.num_frames())).unwrap()
        })
        .collect()
}

fn assert_distribution(a: &AlignmentDistribution) -> Result<(), TestCaseError> {
    prop_assert!(a.values().as_slice().iter().all(|&v| v >= 0.0));
    prop_assert!(a.max_row_sum_error() < 1e-9, "row sum error {}", a.max_row_sum_error());
    Ok(())
}

proptest! {
    #[test]
    fn constrained_rows_are_distributions((p, eps) in layer()) {
        let alphas = alphas(&p);
        for a in &alphas {
            assert_distribution(a)?;
        }
        let m = p.len();
        for mode in [ConstraintMode::MutuallyConstrained, ConstraintMode::SelfConstrained] {
            let cfg = ConstraintConfig::new(eps, if mode == ConstraintMode::SelfConstrained { 1 } else { m }, mode).unwrap();
            for c in constrain(&alphas, &cfg).unwrap() {
                assert_distribution(&c)?;
            }
        }
    }

    #[test]
    fn constraint_vanishes_beyond_input((p, _) in layer()) {
        let alphas = alphas(&p);
        let t = p[0].cols();
        let all = constrain(&alphas, &ConstraintConfig::mutual(t, p.len())).unwrap();
        for (c, a) in all.iter().zip(&alphas) {
            prop_assert!(c.values().max_abs_diff(a.values()).unwrap() < 1e-12);
        }
    }

    #[test]
    fn kernels_agree(p in (1usize..6, 1usize..20).prop_flat_map(|(l, t)| matrix(l, t, 0.0, 0.99))) {
        let p = SelectionProbabilities::new(p, 0).unwrap();
        let a0 = one_hot_start(p.num_frames());
        let direct = expected_alignment_with(&p, &a0, AlphaKernel::Direct).unwrap();
        let scan = expected_alignment_with(&p, &a0, AlphaKernel::CumulativeProduct).unwrap();
        prop_assert!(direct.values().max_abs_diff(scan.values()).unwrap() < 1e-9);
    }

    #[test]
    fn chunk_rows_bounded_by_alignment_mass(
        (p, u, w) in (1usize..4, 1usize..10).prop_flat_map(|(l, t)| (matrix(l, t, 0.0, 1.0), matrix(l, t, -5.0, 5.0), 1usize..5))
    ) {
        let a = &alphas(&[p])[0];
        let beta = chunk_attention(a, &u, w).unwrap();
        let frames = a.frame_weights();
        for i in 0..frames.rows() {
            let row = beta.values().row(i);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            let total: f64 = row.iter().sum();
            let mass: f64 = frames.row(i).iter().sum();
            prop_assert!(total <= 1.0 + 1e-9);
            prop_assert!((total - mass).abs() < 1e-9);
        }
    }
}

fn small_model(num_heads: usize) -> (ToyModelParams, mcmma::toy::Example) {
    let task = SyntheticTask {
        num_frames: 12,
        num_steps: 3,
        input_dim: 5,
        num_examples: 1,
        ..SyntheticTask::default()
    };
    let data = gen_synthetic(&task).unwrap();
    let cfg = ModelConfig {
        vocab_size: task.vocab_size,
        num_frames: task.num_frames,
        num_steps: task.num_steps,
        input_dim: task.input_dim,
        model_dim: 6,
        num_heads,
        chunk_width: 2,
    };
    (ToyModelParams::init(cfg, 3, 0.5).unwrap(), data.examples[0].clone())
}

#[test]
fn single_head_delta_is_mma() {
    let (params, ex) = small_model(1);
    let mma = toy_forward(&params, &ex, TrainMode::Mma, 2, ForwardOptions::default()).unwrap();
    for eps in [0, 1, 4] {
        let delta = toy_forward(&params, &ex, TrainMode::McmmaDelta, eps, ForwardOptions::default()).unwrap();
        assert!((delta.loss - mma.loss).abs() < 1e-12);
        let (a, b) = (delta.alignments[0].as_ref().unwrap(), mma.alignments[0].as_ref().unwrap());
        assert!(a.values().max_abs_diff(b.values()).unwrap() < 1e-12);
    }
}

#[test]
fn waiting_past_the_input_is_mma() {
    let (params, ex) = small_model(3);
    let mma = toy_forward(&params, &ex, TrainMode::Mma, 0, ForwardOptions::default()).unwrap();
    for mode in [TrainMode::McmmaDelta, TrainMode::McmmaGamma] {
        let out = toy_forward(&params, &ex, mode, 12, ForwardOptions::default()).unwrap();
        assert!((out.loss - mma.loss).abs() < 1e-12, "{mode:?}");
    }
}

#[test]
fn toy_attention_rows_are_distributions() {
    let (params, ex) = small_model(3);
    for mode in [TrainMode::Mma, TrainMode::McmmaDelta, TrainMode::McmmaGamma] {
        let out = toy_forward(&params, &ex, mode, 1, ForwardOptions::default()).unwrap();
        for a in out.alignments.iter().flatten() {
            assert!(a.values().as_slice().iter().all(|&v| v >= 0.0));
            assert!(a.max_row_sum_error() < 1e-9);
        }
    }
}
