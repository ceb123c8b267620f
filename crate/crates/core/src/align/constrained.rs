//! Constrained expectations `γ̂` (self-constrained) and `δ̂` (mutually
//! constrained), evaluated directly from the unconstrained `α`.
//!
//! Both use the conventions `B(x) = 1` and `A(x) = 0` for frame indices
//! `x ≤ 0`, `B_0(·) = 1` and `A_0(·) = 0` for the step before the first,
//! and an empty product over heads equal to one. With these conventions
//! every output row sums to one whatever the mass of the input rows.

use super::{
    clamp_remainder, AlignmentDistribution, AlignmentKind, ConstraintConfig, ConstraintMode,
};
use crate::error::{invalid, shape_err, Result};
use crate::matrix::Matrix;

/// `B(x) = 1 - Σ_{k ≤ x} frames[k]` for `x = 0..=T` (1-based `x`).
pub(crate) fn remainders(frames: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(frames.len() + 1);
    out.push(1.0);
    let mut acc = 0.0;
    for &a in frames {
        acc += a;
        out.push(clamp_remainder(1.0 - acc));
    }
    out
}

/// Self-constrained expectation `γ̂` for one head.
///
/// Frames `1..=ε` copy `α`; for `ε < j ≤ T`
/// `γ̂[i][j] = α[i][j]·B_{i-1}(j-ε) + B_i(j-1)·α[i-1][j-ε]`, and the
/// no-selection column is `B_i(T)·B_{i-1}(T-ε)`.
pub fn self_constrained(
    alpha: &AlignmentDistribution,
    cfg: &ConstraintConfig,
) -> Result<AlignmentDistribution> {
    cfg.validate()?;
    if cfg.mode != ConstraintMode::SelfConstrained {
        return Err(invalid("self_constrained requires a self-constrained config"));
    }
    check_unconstrained(alpha)?;
    Ok(AlignmentDistribution::from_raw(
        self_rows(alpha.values(), cfg.epsilon),
        AlignmentKind::SelfConstrainedGamma,
    ))
}

/// Mutually-constrained expectation `δ̂` for every head of a layer.
///
/// With `Q_m(x) = Π_{m' ≠ m} B^{m'}_i(x)` (and `Q_m(x) = 1` for `x ≤ 0`),
/// frames `1..=ε` copy `α^m`; for `ε < j ≤ T`
/// `δ̂[i][j] = α^m[i][j]·Q_m(j-ε) + B^m_i(j-1)·(Q_m(j-ε-1) - Q_m(j-ε))`;
/// the no-selection column is `B^m_i(T)·Q_m(T-ε)`.
///
/// ```
/// use mcmma::align::{
///     expected_alignment, mutually_constrained, one_hot_start, ConstraintConfig,
///     SelectionProbabilities,
/// };
/// use mcmma::Matrix;
///
/// let heads = [[[0.2, 0.7, 0.4, 0.9]], [[0.6, 0.1, 0.3, 0.5]]];
/// let alphas = heads
///     .iter()
///     .enumerate()
///     .map(|(m, rows)| {
///         let p = SelectionProbabilities::new(Matrix::from_rows(rows)?, m)?;
///         expected_alignment(&p, &one_hot_start(4))
///     })
///     .collect::<Result<Vec<_>, _>>()?;
/// let deltas = mutually_constrained(&alphas, &ConstraintConfig::mutual(1, 2))?;
/// for delta in &deltas {
///     assert!(delta.max_row_sum_error() < 1e-12);
/// }
/// # Ok::<(), mcmma::Error>(())
/// ```
pub fn mutually_constrained(
    alphas: &[AlignmentDistribution],
    cfg: &ConstraintConfig,
) -> Result<Vec<AlignmentDistribution>> {
    cfg.validate()?;
    if cfg.mode != ConstraintMode::MutuallyConstrained {
        return Err(invalid("mutually_constrained requires a mutually-constrained config"));
    }
    if alphas.is_empty() {
        return Err(invalid("at least one head is required"));
    }
    if alphas.len() != cfg.num_heads {
        return Err(shape_err(format!(
            "config declares {} heads but {} alignments were given",
            cfg.num_heads,
            alphas.len()
        )));
    }
    let shape = alphas[0].values().shape();
    for (m, a) in alphas.iter().enumerate() {
        check_unconstrained(a)?;
        if a.values().shape() != shape {
            return Err(shape_err(format!(
                "head {m} has shape {:?}, head 0 has {:?}",
                a.values().shape(),
                shape
            )));
        }
    }
    let mats: Vec<&Matrix> = alphas.iter().map(|a| a.values()).collect();
    Ok(mutual_rows(&mats, cfg.epsilon)
        .into_iter()
        .map(|v| AlignmentDistribution::from_raw(v, AlignmentKind::MutuallyConstrainedDelta))
        .collect())
}

/// Dispatches on `cfg.mode`. The self-constrained mode is applied to each
/// head independently.
pub fn constrain(
    alphas: &[AlignmentDistribution],
    cfg: &ConstraintConfig,
) -> Result<Vec<AlignmentDistribution>> {
    match cfg.mode {
        ConstraintMode::SelfConstrained => alphas
            .iter()
            .map(|a| self_constrained(a, cfg))
            .collect(),
        ConstraintMode::MutuallyConstrained => mutually_constrained(alphas, cfg),
    }
}

fn check_unconstrained(alpha: &AlignmentDistribution) -> Result<()> {
    if alpha.kind() != AlignmentKind::UnconstrainedAlpha {
        return Err(invalid(format!(
            "constrained expectations take an unconstrained alpha, got {:?}",
            alpha.kind()
        )));
    }
    Ok(())
}

pub(crate) fn self_rows(alpha: &Matrix, epsilon: usize) -> Matrix {
    let (steps, cols) = alpha.shape();
    let frames = cols - 1;
    let mut out = Matrix::zeros(steps, cols);
    let mut prev_b = vec![1.0; frames + 1];
    let mut prev_a = vec![0.0; frames];
    for i in 0..steps {
        let a = &alpha.row(i)[..frames];
        let b = remainders(a);
        let row = out.row_mut(i);
        for j in 1..=frames {
            row[j - 1] = if j <= epsilon {
                a[j - 1]
            } else {
                let back = j - epsilon;
                a[j - 1] * prev_b[back] + b[j - 1] * prev_a[back - 1]
            };
        }
        row[frames] = b[frames] * at_or_one(&prev_b, frames, epsilon);
        prev_b = b;
        prev_a.copy_from_slice(a);
    }
    out
}

pub(crate) fn mutual_rows(alphas: &[&Matrix], epsilon: usize) -> Vec<Matrix> {
    let heads = alphas.len();
    let (steps, cols) = alphas[0].shape();
    let frames = cols - 1;
    let mut outs = vec![Matrix::zeros(steps, cols); heads];
    for i in 0..steps {
        let b: Vec<Vec<f64>> = alphas.iter().map(|a| remainders(&a.row(i)[..frames])).collect();
        for m in 0..heads {
            let q = others_product(&b, m);
            let a = &alphas[m].row(i)[..frames];
            let row = outs[m].row_mut(i);
            for j in 1..=frames {
                row[j - 1] = if j <= epsilon {
                    a[j - 1]
                } else {
                    let back = j - epsilon;
                    a[j - 1] * q[back] + b[m][j - 1] * (q[back - 1] - q[back])
                };
            }
            row[frames] = b[m][frames] * at_or_one(&q, frames, epsilon);
        }
    }
    outs
}

/// `Q_m(x)` for `x = 0..=T`, the product of the other heads' remainders.
pub(crate) fn others_product(b: &[Vec<f64>], m: usize) -> Vec<f64> {
    let len = b[m].len();
    (0..len)
        .map(|x| {
            b.iter()
                .enumerate()
                .filter(|(h, _)| *h != m)
                .map(|(_, r)| r[x])
                .product()
        })
        .collect()
}

/// `v[frames - epsilon]`, or 1 when that index is not positive.
#[inline]
pub(crate) fn at_or_one(v: &[f64], frames: usize, epsilon: usize) -> f64 {
    if epsilon >= frames {
        1.0
    } else {
        v[frames - epsilon]
    }
}
