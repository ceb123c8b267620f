//! Randomised check batteries shared by the `oracle-check` and `gradcheck`
//! commands and the acceptance suite. Every battery is deterministic in
//! its seed range.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::{
    chunk_attention, constrain, expected_alignment, expected_context, one_hot_start, AlignmentDistribution,
    AlignmentKind, ConstraintConfig, ConstraintMode, SelectionProbabilities,
};
use crate::decode::DecodePolicy;
use crate::error::Result;
use crate::grad::{
    alpha_adjoint, chunk_adjoint, constrained_adjoint, context_adjoint, finite_diff_check, layer_backward,
    layer_forward, AttentionMode,
};
use crate::matrix::Matrix;
use crate::oracle::{alpha_by_enumeration, constrained_by_direct_sum, monte_carlo_hsd};
use crate::toy::{backward, forward_cached, gen_synthetic, ForwardOptions, ModelConfig, SyntheticTask, ToyModelParams, TrainMode};

/// One line of a check table.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub instances: usize,
    /// Largest deviation (or violation count) seen.
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

/// Formats rows as an aligned text table with a PASS/FAIL column.
pub fn format_table(rows: &[CheckRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$}  {:>9}  {:>12}  {:>9}  status\n", "check", "instances", "max_error", "tolerance");
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>9}  {:>12.3e}  {:>9.0e}  {}\n",
            r.name,
            r.instances,
            r.max_error,
            r.tolerance,
            if r.passed() { "PASS" } else { "FAIL" }
        ));
    }
    out
}

fn max_abs(a: &Matrix, b: &Matrix) -> f64 {
    a.max_abs_diff(b).unwrap_or(f64::INFINITY)
}

fn uniform_p(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
}

fn alphas_for(p: &[Matrix], alpha0: &[f64]) -> Result<Vec<AlignmentDistribution>> {
    p.iter()
        .enumerate()
        .map(|(m, pm)| expected_alignment(&SelectionProbabilities::new(pm.clone(), m)?, alpha0))
        .collect()
}

/// Instance grid for the oracle comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleGrid {
    pub max_frames: usize,
    pub max_steps: usize,
    pub max_heads: usize,
    pub seeds: u64,
}

impl Default for OracleGrid {
    fn default() -> Self {
        Self {
            max_frames: 8,
            max_steps: 4,
            max_heads: 3,
            seeds: 50,
        }
    }
}

/// Expected alignment against path enumeration, and both constrained
/// kernels against the direct-sum expansion, for every `T`, `L`, `M` in the
/// grid and `ε ∈ {0, 1, 2, T}`.
pub fn oracle_equivalence(grid: &OracleGrid) -> Result<Vec<CheckRow>> {
    let mut alpha_row = CheckRow {
        name: "alpha vs path enumeration".into(),
        instances: 0,
        max_error: 0.0,
        tolerance: 1e-12,
    };
    let mut mutual_row = CheckRow {
        name: "delta vs direct sum".into(),
        ..alpha_row.clone()
    };
    let mut self_row = CheckRow {
        name: "gamma vs direct sum".into(),
        ..alpha_row.clone()
    };
    for t in 1..=grid.max_frames {
        for l in 1..=grid.max_steps {
            for m in 1..=grid.max_heads {
                for seed in 0..grid.seeds {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(((t * 64 + l) * 8 + m) as u64);
                    let p: Vec<Matrix> = (0..m).map(|_| uniform_p(&mut rng, l, t)).collect();
                    let alpha0 = one_hot_start(t);
                    let alphas = alphas_for(&p, &alpha0)?;
                    for (pm, a) in p.iter().zip(&alphas) {
                        let oracle = alpha_by_enumeration(pm, &alpha0)?;
                        alpha_row.max_error = alpha_row.max_error.max(max_abs(a.values(), oracle.values()));
                        alpha_row.instances += 1;
                    }
                    let mut epsilons = vec![0, 1, 2, t];
                    epsilons.dedup();
                    for eps in epsilons {
                        for (mode, row) in [
                            (ConstraintMode::MutuallyConstrained, &mut mutual_row),
                            (ConstraintMode::SelfConstrained, &mut self_row),
                        ] {
                            let cfg = ConstraintConfig::new(eps, m, mode)?;
                            let fast = constrain(&alphas, &cfg)?;
                            let slow = constrained_by_direct_sum(&alphas, &cfg)?;
                            for (f, s) in fast.iter().zip(&slow) {
                                row.max_error = row.max_error.max(max_abs(f.values(), s.values()));
                            }
                            row.instances += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(vec![alpha_row, mutual_row, self_row])
}

/// Row sums of `γ̂` and `δ̂` on random instances, half of them started
/// from a sub-probability initial row.
pub fn normalization(instances: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let mut worst = [0.0f64; 2];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..instances {
        let t = rng.random_range(1..=12);
        let l = rng.random_range(1..=6);
        let m = rng.random_range(1..=4);
        let eps = rng.random_range(0..=t + 1);
        let alpha0: Vec<f64> = if k % 2 == 0 {
            one_hot_start(t)
        } else {
            let raw: Vec<f64> = (0..t).map(|_| rng.random::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            let mass = rng.random_range(0.1..1.0);
            raw.iter().map(|v| v / total * mass).collect()
        };
        let p: Vec<Matrix> = (0..m).map(|_| uniform_p(&mut rng, l, t)).collect();
        let alphas = alphas_for(&p, &alpha0)?;
        for (slot, mode) in [ConstraintMode::SelfConstrained, ConstraintMode::MutuallyConstrained]
            .into_iter()
            .enumerate()
        {
            for out in constrain(&alphas, &ConstraintConfig::new(eps, m, mode)?)? {
                worst[slot] = worst[slot].max(out.max_row_sum_error());
            }
        }
    }
    Ok(vec![
        CheckRow {
            name: "gamma rows sum to 1".into(),
            instances,
            max_error: worst[0],
            tolerance: 1e-9,
        },
        CheckRow {
            name: "delta rows sum to 1".into(),
            instances,
            max_error: worst[1],
            tolerance: 1e-9,
        },
    ])
}

/// `δ̂ = α` for one head or `ε ≥ T`, and `γ̂ = α` for `ε ≥ T`.
pub fn degenerate_reductions(instances: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let mut worst = [0.0f64; 3];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..instances {
        let t = rng.random_range(1..=12);
        let l = rng.random_range(1..=6);
        let m = rng.random_range(2..=4);
        let p: Vec<Matrix> = (0..m).map(|_| uniform_p(&mut rng, l, t)).collect();
        let alphas = alphas_for(&p, &one_hot_start(t))?;
        let eps = rng.random_range(0..=t);
        let single = constrain(&alphas[..1], &ConstraintConfig::mutual(eps, 1))?;
        worst[0] = worst[0].max(max_abs(single[0].values(), alphas[0].values()));
        let big = t + rng.random_range(0..3);
        for (d, a) in constrain(&alphas, &ConstraintConfig::mutual(big, m))?.iter().zip(&alphas) {
            worst[1] = worst[1].max(max_abs(d.values(), a.values()));
        }
        for (g, a) in constrain(&alphas, &ConstraintConfig::self_constrained(big))?.iter().zip(&alphas) {
            worst[2] = worst[2].max(max_abs(g.values(), a.values()));
        }
    }
    Ok(["delta = alpha when M = 1", "delta = alpha when eps >= T", "gamma = alpha when eps >= T"]
        .iter()
        .zip(worst)
        .map(|(name, w)| CheckRow {
            name: name.to_string(),
            instances,
            max_error: w,
            tolerance: 1e-12,
        })
        .collect())
}

/// Spread and monotonicity violations of head-synchronous decoding on
/// `samples` hard Bernoulli draws for each `M ∈ heads`, `ε ∈ epsilons`.
pub fn hsd_invariants(heads: &[usize], epsilons: &[usize], samples: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for &m in heads {
        for &eps in epsilons {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((m as u64) << 32 | eps as u64));
            let (l, t) = (6, 16);
            // Low probabilities keep heads idle long enough to be forced.
            let p: Vec<Matrix> = (0..m)
                .map(|_| Matrix::from_fn(l, t, |_, _| rng.random_range(0.0..0.4)))
                .collect();
            let policy = DecodePolicy::with_epsilon(eps);
            let report = monte_carlo_hsd(&p, &policy, samples, seed)?;
            rows.push(CheckRow {
                name: format!("hsd invariants M={m} eps={eps}"),
                instances: samples,
                max_error: (report.spread_violations + report.monotonicity_violations) as f64,
                tolerance: 0.0,
            });
        }
    }
    Ok(rows)
}

/// Step and tolerance of the kernel-level finite-difference checks.
pub const FD_STEP: f64 = 1e-5;
pub const KERNEL_TOLERANCE: f64 = 1e-5;
pub const TOY_TOLERANCE: f64 = 1e-4;

// Central differences at step 1e-5 carry ~1e-11 of round-off, so entries
// below ~1e-6 cannot be resolved to 1e-5 relative error. Probabilities near
// 0 or 1 produce such entries, hence the narrow sampling range.
const P_RANGE: std::ops::Range<f64> = 0.3..0.7;

fn random_p(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(P_RANGE))
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn dot(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

fn split(flat: &[f64], m: usize, rows: usize, cols: usize) -> Vec<Matrix> {
    flat.chunks(rows * cols)
        .take(m)
        .map(|c| Matrix::from_vec(rows, cols, c.to_vec()).expect("chunk shape"))
        .collect()
}

fn concat(ms: &[Matrix]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
}

/// `(L, T, M)` within the gradient-check bounds `L ≤ 3`, `T ≤ 6`, `M ≤ 3`.
fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(1..=3), rng.random_range(1..=6), rng.random_range(1..=3))
}

fn alpha_values(p: &Matrix) -> Matrix {
    let sp = SelectionProbabilities::new(p.clone(), 0).expect("valid probabilities");
    expected_alignment(&sp, &one_hot_start(p.cols()))
        .expect("valid alignment")
        .into_values()
}

fn check_alpha(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (l, t, _) = dims(rng);
    let p = random_p(rng, l, t);
    let w = random_matrix(rng, l, t + 1);
    let alpha = alpha_values(&p);
    let sp = SelectionProbabilities::new(p.clone(), 0)?;
    let dist = AlignmentDistribution::new(alpha, AlignmentKind::UnconstrainedAlpha)?;
    let dp = alpha_adjoint(&sp, &one_hot_start(t), &dist, &w)?;
    finite_diff_check(
        |x| dot(&alpha_values(&Matrix::from_vec(l, t, x.to_vec()).expect("shape")), &w),
        p.as_slice(),
        dp.as_slice(),
        FD_STEP,
    )
}

fn check_constrained(rng: &mut ChaCha8Rng, mode: ConstraintMode) -> Result<f64> {
    let (l, t, m) = dims(rng);
    let eps = rng.random_range(0..=t);
    let cfg = ConstraintConfig::new(eps, m, mode)?;
    let p: Vec<Matrix> = (0..m).map(|_| random_p(rng, l, t)).collect();
    let w: Vec<Matrix> = (0..m).map(|_| random_matrix(rng, l, t + 1)).collect();
    let alpha0 = one_hot_start(t);
    let loss = |x: &[f64]| {
        let alphas = alphas_for(&split(x, m, l, t), &alpha0).expect("valid alphas");
        let out = constrain(&alphas, &cfg).expect("valid constraint");
        out.iter().zip(&w).map(|(d, wk)| dot(d.values(), wk)).sum::<f64>()
    };
    let alphas = alphas_for(&p, &alpha0)?;
    let d_alpha = constrained_adjoint(&alphas, &cfg, &w)?;
    let analytic = (0..m)
        .map(|k| {
            let sp = SelectionProbabilities::new(p[k].clone(), k)?;
            alpha_adjoint(&sp, &alpha0, &alphas[k], &d_alpha[k])
        })
        .collect::<Result<Vec<_>>>()?;
    finite_diff_check(loss, &concat(&p), &concat(&analytic), FD_STEP)
}

fn padded(a: &Matrix) -> AlignmentDistribution {
    let (l, t) = a.shape();
    let m = Matrix::from_fn(l, t + 1, |i, j| if j < t { a[(i, j)] } else { 0.0 });
    AlignmentDistribution::new(m, AlignmentKind::UnconstrainedAlpha).expect("non-negative weights")
}

fn check_chunk(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (l, t, _) = dims(rng);
    let width = rng.random_range(1..=3);
    let a = Matrix::from_fn(l, t, |_, _| rng.random_range(0.1..1.0));
    let u = random_matrix(rng, l, t);
    let w = random_matrix(rng, l, t);
    let beta = chunk_attention(&padded(&a), &u, width)?;
    let (d_a, d_u) = chunk_adjoint(&a, &u, &beta, &w)?;
    let f = |a: &Matrix, u: &Matrix| dot(chunk_attention(&padded(a), u, width).expect("valid").values(), &w);
    let ea = finite_diff_check(
        |x| f(&Matrix::from_vec(l, t, x.to_vec()).expect("shape"), &u),
        a.as_slice(),
        d_a.as_slice(),
        FD_STEP,
    )?;
    let eu = finite_diff_check(
        |x| f(&a, &Matrix::from_vec(l, t, x.to_vec()).expect("shape")),
        u.as_slice(),
        d_u.as_slice(),
        FD_STEP,
    )?;
    Ok(ea.max(eu))
}

fn check_context(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (l, t, _) = dims(rng);
    let d = 3;
    let a = Matrix::from_fn(l, t, |_, _| rng.random_range(0.0..1.0));
    let h = random_matrix(rng, t, d);
    let w = random_matrix(rng, l, d);
    let (d_a, d_h) = context_adjoint(&a, &h, &w)?;
    let f = |a: &Matrix, h: &Matrix| dot(&expected_context(a, h).expect("shapes"), &w);
    let ea = finite_diff_check(
        |x| f(&Matrix::from_vec(l, t, x.to_vec()).expect("shape"), &h),
        a.as_slice(),
        d_a.as_slice(),
        FD_STEP,
    )?;
    let eh = finite_diff_check(
        |x| f(&a, &Matrix::from_vec(t, d, x.to_vec()).expect("shape")),
        h.as_slice(),
        d_h.as_slice(),
        FD_STEP,
    )?;
    Ok(ea.max(eh))
}

fn check_layer(rng: &mut ChaCha8Rng, mode_index: u64) -> Result<f64> {
    let (l, t, m) = dims(rng);
    let d = 2;
    let width = rng.random_range(1..=3);
    let eps = rng.random_range(0..=t);
    let mode = match mode_index % 3 {
        0 => AttentionMode::Unconstrained,
        1 => AttentionMode::SelfConstrained { epsilon: eps },
        _ => AttentionMode::MutuallyConstrained { epsilon: eps },
    };
    let p: Vec<Matrix> = (0..m).map(|_| random_p(rng, l, t)).collect();
    let u: Vec<Matrix> = (0..m).map(|_| random_matrix(rng, l, t)).collect();
    let h = random_matrix(rng, t, d);
    let wc: Vec<Matrix> = (0..m).map(|_| random_matrix(rng, l, d)).collect();
    let a0 = one_hot_start(t);
    let loss = |p: &[Matrix], u: &[Matrix], h: &Matrix| {
        let f = layer_forward(p, u, h, &a0, mode, width).expect("valid layer");
        f.contexts.iter().zip(&wc).map(|(c, w)| dot(c, w)).sum::<f64>()
    };
    let fwd = layer_forward(&p, &u, &h, &a0, mode, width)?;
    let g = layer_backward(&p, &u, &h, &a0, mode, width, &fwd, &wc)?;
    let ep = finite_diff_check(|x| loss(&split(x, m, l, t), &u, &h), &concat(&p), &concat(&g.d_p), FD_STEP)?;
    let eu = finite_diff_check(|x| loss(&p, &split(x, m, l, t), &h), &concat(&u), &concat(&g.d_u), FD_STEP)?;
    let eh = finite_diff_check(
        |x| loss(&p, &u, &Matrix::from_vec(t, d, x.to_vec()).expect("shape")),
        h.as_slice(),
        g.d_h.as_slice(),
        FD_STEP,
    )?;
    Ok(ep.max(eu).max(eh))
}

/// Whole toy model on a tiny instance (`T = 8`, `L = 2`, `d = 4`, `M = 2`),
/// cycling through the three training modes and a dropped head.
fn check_toy(seed: u64) -> Result<f64> {
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
    let ex = gen_synthetic(&task)?.examples.remove(0);
    let cfg = ModelConfig {
        vocab_size: 5,
        num_frames: 8,
        num_steps: 2,
        input_dim: 3,
        model_dim: 4,
        num_heads: 2,
        chunk_width: 3,
    };
    let params = ToyModelParams::init(cfg, seed, -0.5)?;
    let mode = [TrainMode::Mma, TrainMode::McmmaDelta, TrainMode::McmmaGamma][(seed % 3) as usize];
    let eps = 1 + (seed as usize % 3);
    let mask = [seed % 4 != 1, true];
    let opts = ForwardOptions {
        mask: Some(&mask),
        energy_noise: None,
    };
    let (_, cache) = forward_cached(&params, &ex, mode, eps, opts)?;
    let mut grads = params.zeros_like();
    backward(&params, &ex, &cache, &mut grads)?;
    let loss = |x: &[f64]| {
        let mut q = params.clone();
        q.set_flat(x).expect("flat length");
        forward_cached(&q, &ex, mode, eps, opts).map_or(f64::NAN, |(o, _)| o.loss)
    };
    finite_diff_check(loss, &params.to_flat(), &grads.to_flat(), FD_STEP)
}

/// Finite-difference checks of every adjoint over `seeds` random instances.
pub fn gradient_checks(seeds: u64) -> Result<Vec<CheckRow>> {
    type Case = fn(&mut ChaCha8Rng, u64) -> Result<f64>;
    let kernels: [(&str, Case); 6] = [
        ("alpha adjoint", |r, _| check_alpha(r)),
        ("delta adjoint", |r, _| check_constrained(r, ConstraintMode::MutuallyConstrained)),
        ("gamma adjoint", |r, _| check_constrained(r, ConstraintMode::SelfConstrained)),
        ("chunk attention adjoint", |r, _| check_chunk(r)),
        ("expected context adjoint", |r, _| check_context(r)),
        ("attention layer adjoint", check_layer),
    ];
    let mut rows = Vec::new();
    for (k, (name, case)) in kernels.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            worst = worst.max(case(&mut rng, seed)?);
        }
        rows.push(CheckRow {
            name: name.to_string(),
            instances: seeds as usize,
            max_error: worst,
            tolerance: KERNEL_TOLERANCE,
        });
    }
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        worst = worst.max(check_toy(seed)?);
    }
    rows.push(CheckRow {
        name: "toy model end to end".into(),
        instances: seeds as usize,
        max_error: worst,
        tolerance: TOY_TOLERANCE,
    });
    Ok(rows)
}
