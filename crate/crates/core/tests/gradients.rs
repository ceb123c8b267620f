//! Hand-written adjoints against central finite differences.

use mcmma::align::{
    chunk_attention, constrain, expected_alignment, expected_context, one_hot_start, AlignmentDistribution, AlignmentKind,
    ConstraintConfig, ConstraintMode, SelectionProbabilities,
};
use mcmma::grad::{
    alpha_adjoint, chunk_adjoint, constrained_adjoint, context_adjoint, finite_diff_check, layer_backward,
    layer_forward, numeric_gradient, AttentionMode,
};
use mcmma::toy::{backward, forward_cached, gen_synthetic, ForwardOptions, ModelConfig, SyntheticTask, ToyModelParams, TrainMode};
use mcmma::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const KERNEL_TOL: f64 = 1e-5;
const TOY_TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

// At step 1e-5 the central difference carries ~1e-11 of round-off, so
// gradient entries below ~1e-6 cannot be resolved to 1e-5 relative.
// Probabilities near 0 or 1 produce such entries; the wide-range test
// below covers them with an extrapolated difference instead.
const P_LOW: f64 = 0.3;
const P_HIGH: f64 = 0.7;

fn random_p(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(P_LOW..P_HIGH))
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn dot(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(1..=3), rng.random_range(1..=6), rng.random_range(1..=3))
}

fn alpha_of(p: &Matrix) -> Matrix {
    let sp = SelectionProbabilities::new(p.clone(), 0).unwrap();
    expected_alignment(&sp, &one_hot_start(p.cols())).unwrap().into_values()
}

fn split(flat: &[f64], m: usize, rows: usize, cols: usize) -> Vec<Matrix> {
    (0..m)
        .map(|k| Matrix::from_vec(rows, cols, flat[k * rows * cols..(k + 1) * rows * cols].to_vec()).unwrap())
        .collect()
}

fn concat(ms: &[Matrix]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
}

#[test]
fn alpha_adjoint_matches_finite_differences() {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (l, t, _) = dims(&mut rng);
        let p = random_p(&mut rng, l, t);
        let w = random_matrix(&mut rng, l, t + 1);
        let loss = |x: &[f64]| {
            let a = alpha_of(&Matrix::from_vec(l, t, x.to_vec()).unwrap());
            dot(&a, &w) + a.as_slice().iter().map(|v| v * v).sum::<f64>()
        };
        let alpha = alpha_of(&p);
        let mut d_alpha = w.clone();
        d_alpha.add_scaled(&alpha, 2.0);
        let sp = SelectionProbabilities::new(p.clone(), 0).unwrap();
        let dist = AlignmentDistribution::new(alpha, AlignmentKind::UnconstrainedAlpha).unwrap();
        let analytic = alpha_adjoint(&sp, &one_hot_start(t), &dist, &d_alpha).unwrap();
        worst = worst.max(finite_diff_check(loss, p.as_slice(), analytic.as_slice(), STEP).unwrap());
    }
    assert!(worst <= KERNEL_TOL, "max relative error {worst:e}");
}

fn constrained_case(mode: ConstraintMode) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (l, t, mut m) = dims(&mut rng);
        if mode == ConstraintMode::SelfConstrained {
            m = 1;
        }
        let eps = rng.random_range(0..=t);
        let cfg = ConstraintConfig::new(eps, m, mode).unwrap();
        let p: Vec<Matrix> = (0..m).map(|_| random_p(&mut rng, l, t)).collect();
        let w: Vec<Matrix> = (0..m).map(|_| random_matrix(&mut rng, l, t + 1)).collect();
        let forward = |ps: &[Matrix]| -> (Vec<AlignmentDistribution>, Vec<AlignmentDistribution>) {
            let alphas: Vec<AlignmentDistribution> = ps
                .iter()
                .enumerate()
                .map(|(k, pk)| {
                    let sp = SelectionProbabilities::new(pk.clone(), k).unwrap();
                    expected_alignment(&sp, &one_hot_start(t)).unwrap()
                })
                .collect();
            let out = constrain(&alphas, &cfg).unwrap();
            (alphas, out)
        };
        let loss = |x: &[f64]| {
            let (_, out) = forward(&split(x, m, l, t));
            out.iter()
                .zip(&w)
                .map(|(d, wk)| dot(d.values(), wk) + d.values().as_slice().iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
        };
        let (alphas, out) = forward(&p);
        let d_out: Vec<Matrix> = out
            .iter()
            .zip(&w)
            .map(|(d, wk)| {
                let mut g = wk.clone();
                g.add_scaled(d.values(), 2.0);
                g
            })
            .collect();
        let d_alpha = constrained_adjoint(&alphas, &cfg, &d_out).unwrap();
        let analytic: Vec<Matrix> = (0..m)
            .map(|k| {
                let sp = SelectionProbabilities::new(p[k].clone(), k).unwrap();
                alpha_adjoint(&sp, &one_hot_start(t), &alphas[k], &d_alpha[k]).unwrap()
            })
            .collect();
        worst = worst.max(finite_diff_check(loss, &concat(&p), &concat(&analytic), STEP).unwrap());
    }
    worst
}

#[test]
fn mutual_adjoint_matches_finite_differences() {
    let worst = constrained_case(ConstraintMode::MutuallyConstrained);
    assert!(worst <= KERNEL_TOL, "max relative error {worst:e}");
}

#[test]
fn self_adjoint_matches_finite_differences() {
    let worst = constrained_case(ConstraintMode::SelfConstrained);
    assert!(worst <= KERNEL_TOL, "max relative error {worst:e}");
}

#[test]
fn chunk_and_context_adjoints_match_finite_differences() {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (l, t, _) = dims(&mut rng);
        let width = rng.random_range(1..=3);
        let a = Matrix::from_fn(l, t, |_, _| rng.random_range(0.1..1.0));
        let u = random_matrix(&mut rng, l, t);
        let wb = random_matrix(&mut rng, l, t);
        let as_dist = |a: &Matrix| {
            let padded = Matrix::from_fn(l, t + 1, |i, j| if j < t { a[(i, j)] } else { 0.0 });
            AlignmentDistribution::new(padded, AlignmentKind::UnconstrainedAlpha).unwrap()
        };
        let beta_of = |a: &Matrix, u: &Matrix| chunk_attention(&as_dist(a), u, width).unwrap().values().clone();
        let beta_full = chunk_attention(&as_dist(&a), &u, width).unwrap();
        let (d_a, d_u) = chunk_adjoint(&a, &u, &beta_full, &wb).unwrap();
        let loss_a = |x: &[f64]| dot(&beta_of(&Matrix::from_vec(l, t, x.to_vec()).unwrap(), &u), &wb);
        worst = worst.max(finite_diff_check(loss_a, a.as_slice(), d_a.as_slice(), STEP).unwrap());
        let loss_u = |x: &[f64]| dot(&beta_of(&a, &Matrix::from_vec(l, t, x.to_vec()).unwrap()), &wb);
        worst = worst.max(finite_diff_check(loss_u, u.as_slice(), d_u.as_slice(), STEP).unwrap());

        let d = 3;
        let h = random_matrix(&mut rng, t, d);
        let wc = random_matrix(&mut rng, l, d);
        let (d_w, d_h) = context_adjoint(&a, &h, &wc).unwrap();
        let loss_w = |x: &[f64]| dot(&expected_context(&Matrix::from_vec(l, t, x.to_vec()).unwrap(), &h).unwrap(), &wc);
        worst = worst.max(finite_diff_check(loss_w, a.as_slice(), d_w.as_slice(), STEP).unwrap());
        let loss_h = |x: &[f64]| dot(&expected_context(&a, &Matrix::from_vec(t, d, x.to_vec()).unwrap()).unwrap(), &wc);
        worst = worst.max(finite_diff_check(loss_h, h.as_slice(), d_h.as_slice(), STEP).unwrap());
    }
    assert!(worst <= KERNEL_TOL, "max relative error {worst:e}");
}

#[test]
fn layer_adjoint_matches_finite_differences() {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let (l, t, m) = dims(&mut rng);
        let d = 2;
        let width = rng.random_range(1..=3);
        let eps = rng.random_range(0..=t);
        let mode = match seed % 3 {
            0 => AttentionMode::Unconstrained,
            1 => AttentionMode::SelfConstrained { epsilon: eps },
            _ => AttentionMode::MutuallyConstrained { epsilon: eps },
        };
        let p: Vec<Matrix> = (0..m).map(|_| random_p(&mut rng, l, t)).collect();
        let u: Vec<Matrix> = (0..m).map(|_| random_matrix(&mut rng, l, t)).collect();
        let h = random_matrix(&mut rng, t, d);
        let wc: Vec<Matrix> = (0..m).map(|_| random_matrix(&mut rng, l, d)).collect();
        let a0 = one_hot_start(t);
        let loss = |p: &[Matrix], u: &[Matrix], h: &Matrix| {
            let f = layer_forward(p, u, h, &a0, mode, width).unwrap();
            f.contexts.iter().zip(&wc).map(|(c, w)| dot(c, w)).sum::<f64>()
        };
        let fwd = layer_forward(&p, &u, &h, &a0, mode, width).unwrap();
        let g = layer_backward(&p, &u, &h, &a0, mode, width, &fwd, &wc).unwrap();
        worst = worst.max(
            finite_diff_check(|x| loss(&split(x, m, l, t), &u, &h), &concat(&p), &concat(&g.d_p), STEP).unwrap(),
        );
        worst = worst.max(
            finite_diff_check(|x| loss(&p, &split(x, m, l, t), &h), &concat(&u), &concat(&g.d_u), STEP).unwrap(),
        );
        worst = worst.max(
            finite_diff_check(
                |x| loss(&p, &u, &Matrix::from_vec(t, d, x.to_vec()).unwrap()),
                h.as_slice(),
                g.d_h.as_slice(),
                STEP,
            )
            .unwrap(),
        );
    }
    assert!(worst <= KERNEL_TOL, "max relative error {worst:e}");
}

#[test]
fn toy_model_end_to_end() {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let task = SyntheticTask {
            vocab_size: 5,
            num_frames: 8,
            num_steps: 2,
            upsample: 4,
            input_dim: 3,
            num_examples: 1,
            seed,
            ..SyntheticTask::default()
        };
        let ex = gen_synthetic(&task).unwrap().examples.remove(0);
        let cfg = ModelConfig {
            vocab_size: 5,
            num_frames: 8,
            num_steps: 2,
            input_dim: 3,
            model_dim: 4,
            num_heads: 2,
            chunk_width: 3,
        };
        let params = ToyModelParams::init(cfg, seed, -0.5).unwrap();
        let mode = [TrainMode::Mma, TrainMode::McmmaDelta, TrainMode::McmmaGamma][(seed % 3) as usize];
        let eps = 1 + (seed as usize % 3);
        let mask = [seed % 4 != 1, true];
        let opts = ForwardOptions {
            mask: Some(&mask),
            energy_noise: None,
        };
        let (_, cache) = forward_cached(&params, &ex, mode, eps, opts).unwrap();
        let mut grads = params.zeros_like();
        backward(&params, &ex, &cache, &mut grads).unwrap();
        let loss = |x: &[f64]| {
            let mut q = params.clone();
            q.set_flat(x).unwrap();
            forward_cached(&q, &ex, mode, eps, opts).unwrap().0.loss
        };
        let err = finite_diff_check(loss, &params.to_flat(), &grads.to_flat(), STEP).unwrap();
        worst = worst.max(err);
    }
    assert!(worst <= TOY_TOL, "max relative error {worst:e}");
}

// Richardson-extrapolated central differences, accurate to ~1e-11 here.
fn extrapolated_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
    let coarse = numeric_gradient(&f, x, 2e-3).unwrap();
    let fine = numeric_gradient(&f, x, 1e-3).unwrap();
    coarse.iter().zip(&fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect()
}

#[test]
fn layer_adjoint_wide_range() {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let (l, t, m) = dims(&mut rng);
        let width = rng.random_range(1..=3);
        let eps = rng.random_range(0..=t);
        let mode = match seed % 3 {
            0 => AttentionMode::Unconstrained,
            1 => AttentionMode::SelfConstrained { epsilon: eps },
            _ => AttentionMode::MutuallyConstrained { epsilon: eps },
        };
        let p: Vec<Matrix> = (0..m)
            .map(|_| Matrix::from_fn(l, t, |_, _| rng.random_range(0.01..0.99)))
            .collect();
        let u: Vec<Matrix> = (0..m).map(|_| random_matrix(&mut rng, l, t)).collect();
        let h = random_matrix(&mut rng, t, 2);
        let wc: Vec<Matrix> = (0..m).map(|_| random_matrix(&mut rng, l, 2)).collect();
        let a0 = one_hot_start(t);
        let loss = |p: &[Matrix], u: &[Matrix]| {
            let f = layer_forward(p, u, &h, &a0, mode, width).unwrap();
            f.contexts.iter().zip(&wc).map(|(c, w)| dot(c, w)).sum::<f64>()
        };
        let fwd = layer_forward(&p, &u, &h, &a0, mode, width).unwrap();
        let g = layer_backward(&p, &u, &h, &a0, mode, width, &fwd, &wc).unwrap();
        let num_p = extrapolated_gradient(|x| loss(&split(x, m, l, t), &u), &concat(&p));
        let num_u = extrapolated_gradient(|x| loss(&p, &split(x, m, l, t)), &concat(&u));
        for (a, n) in concat(&g.d_p).iter().chain(&concat(&g.d_u)).zip(num_p.iter().chain(&num_u)) {
            worst = worst.max((a - n).abs());
        }
    }
    assert!(worst <= 1e-9, "max absolute error {worst:e}");
}
