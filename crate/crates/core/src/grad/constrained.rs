use crate::align::{
    others_product, remainders, AlignmentDistribution, AlignmentKind, ConstraintConfig,
    ConstraintMode,
};
use crate::error::{invalid, shape_err, Result};
use crate::matrix::Matrix;

/// Cotangents of the unconstrained alignments for cotangents on the
/// constrained outputs produced by [`crate::align::constrain`] with the
/// same `cfg`.
///
/// The returned matrices have the alignment shape `L_out × (T+1)`; the
/// constrained outputs read only frame columns of `α`, so the last column
/// is always zero.
pub fn constrained_adjoint(
    alphas: &[AlignmentDistribution],
    cfg: &ConstraintConfig,
    d_out: &[Matrix],
) -> Result<Vec<Matrix>> {
    cfg.validate()?;
    if alphas.is_empty() || alphas.len() != d_out.len() {
        return Err(shape_err(format!(
            "{} alignments but {} cotangents",
            alphas.len(),
            d_out.len()
        )));
    }
    let shape = alphas[0].values().shape();
    for (a, d) in alphas.iter().zip(d_out) {
        if a.kind() != AlignmentKind::UnconstrainedAlpha {
            return Err(invalid("constrained_adjoint takes the unconstrained alphas"));
        }
        if a.values().shape() != shape || d.shape() != shape {
            return Err(shape_err("heads and cotangents must share one shape"));
        }
        d.ensure_finite("constrained cotangent")?;
    }
    let mats: Vec<&Matrix> = alphas.iter().map(|a| a.values()).collect();
    let grads: Vec<&Matrix> = d_out.iter().collect();
    match cfg.mode {
        ConstraintMode::SelfConstrained => Ok(mats
            .iter()
            .zip(&grads)
            .map(|(a, d)| self_backward(a, cfg.epsilon, d))
            .collect()),
        ConstraintMode::MutuallyConstrained => {
            if alphas.len() != cfg.num_heads {
                return Err(shape_err("head count differs from config"));
            }
            Ok(mutual_backward(&mats, cfg.epsilon, &grads))
        }
    }
}

/// Turns cotangents on remainders `B(x)`, `x = 1..=T`, into cotangents on
/// the frame entries: `∂B(x)/∂α[k] = -1` for `k ≤ x`.
fn remainder_to_frames(g_b: &[f64], g_alpha: &mut [f64]) {
    let frames = g_alpha.len();
    let mut suffix = 0.0;
    for x in (1..=frames).rev() {
        suffix += g_b[x];
        g_alpha[x - 1] -= suffix;
    }
}

pub(crate) fn mutual_backward(alphas: &[&Matrix], epsilon: usize, d_out: &[&Matrix]) -> Vec<Matrix> {
    let heads = alphas.len();
    let (steps, cols) = alphas[0].shape();
    let frames = cols - 1;
    let mut grads = vec![Matrix::zeros(steps, cols); heads];
    for i in 0..steps {
        let b: Vec<Vec<f64>> = alphas.iter().map(|a| remainders(&a.row(i)[..frames])).collect();
        let mut g_b = vec![vec![0.0; frames + 1]; heads];
        let mut g_a = vec![vec![0.0; frames]; heads];
        for m in 0..heads {
            let q = others_product(&b, m);
            let a = &alphas[m].row(i)[..frames];
            let g = d_out[m].row(i);
            let mut g_q = vec![0.0; frames + 1];
            for j in 1..=frames {
                let gj = g[j - 1];
                if j <= epsilon {
                    g_a[m][j - 1] += gj;
                    continue;
                }
                let back = j - epsilon;
                g_a[m][j - 1] += gj * q[back];
                g_q[back] += gj * (a[j - 1] - b[m][j - 1]);
                g_q[back - 1] += gj * b[m][j - 1];
                g_b[m][j - 1] += gj * (q[back - 1] - q[back]);
            }
            let g_last = g[frames];
            if epsilon >= frames {
                g_b[m][frames] += g_last;
            } else {
                g_b[m][frames] += g_last * q[frames - epsilon];
                g_q[frames - epsilon] += g_last * b[m][frames];
            }
            // Q_m(0) is the constant 1.
            for x in 1..=frames {
                if g_q[x] == 0.0 {
                    continue;
                }
                for other in (0..heads).filter(|&h| h != m) {
                    let rest: f64 = (0..heads)
                        .filter(|&h| h != m && h != other)
                        .map(|h| b[h][x])
                        .product();
                    g_b[other][x] += g_q[x] * rest;
                }
            }
        }
        for m in 0..heads {
            remainder_to_frames(&g_b[m], &mut g_a[m]);
            grads[m].row_mut(i)[..frames].copy_from_slice(&g_a[m]);
        }
    }
    grads
}

pub(crate) fn self_backward(alpha: &Matrix, epsilon: usize, d_out: &Matrix) -> Matrix {
    let (steps, cols) = alpha.shape();
    let frames = cols - 1;
    let b: Vec<Vec<f64>> = (0..steps).map(|i| remainders(&alpha.row(i)[..frames])).collect();
    let mut g_a = Matrix::zeros(steps, frames);
    let mut g_b = Matrix::zeros(steps, frames + 1);
    let ones = vec![1.0; frames + 1];
    let zeros = vec![0.0; frames];
    for i in 0..steps {
        let a = &alpha.row(i)[..frames];
        let (prev_b, prev_a) = if i == 0 {
            (&ones[..], &zeros[..])
        } else {
            (&b[i - 1][..], &alpha.row(i - 1)[..frames])
        };
        let g = d_out.row(i);
        for j in 1..=frames {
            let gj = g[j - 1];
            if j <= epsilon {
                g_a[(i, j - 1)] += gj;
                continue;
            }
            let back = j - epsilon;
            g_a[(i, j - 1)] += gj * prev_b[back];
            g_b[(i, j - 1)] += gj * prev_a[back - 1];
            if i > 0 {
                g_b[(i - 1, back)] += gj * a[j - 1];
                g_a[(i - 1, back - 1)] += gj * b[i][j - 1];
            }
        }
        let g_last = g[frames];
        if epsilon >= frames {
            g_b[(i, frames)] += g_last;
        } else {
            g_b[(i, frames)] += g_last * prev_b[frames - epsilon];
            if i > 0 {
                g_b[(i - 1, frames - epsilon)] += g_last * b[i][frames];
            }
        }
    }
    let mut out = Matrix::zeros(steps, cols);
    for i in 0..steps {
        let mut row = g_a.row(i).to_vec();
        remainder_to_frames(g_b.row(i), &mut row);
        out.row_mut(i)[..frames].copy_from_slice(&row);
    }
    out
}
