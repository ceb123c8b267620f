use crate::align::{AlignmentDistribution, SelectionProbabilities};
use crate::error::{shape_err, Result};
use crate::matrix::Matrix;

/// Cotangent of `p` for a cotangent `d_alpha` on the full `L_out × (T+1)`
/// alignment (no-selection column included).
///
/// `alpha` must be the forward result for `p` and `alpha0`.
pub fn alpha_adjoint(
    p: &SelectionProbabilities,
    alpha0: &[f64],
    alpha: &AlignmentDistribution,
    d_alpha: &Matrix,
) -> Result<Matrix> {
    alpha_adjoint_full(p, alpha0, alpha, d_alpha).map(|(dp, _)| dp)
}

/// Like [`alpha_adjoint`] but also returns the cotangent of `alpha0`.
pub fn alpha_adjoint_full(
    p: &SelectionProbabilities,
    alpha0: &[f64],
    alpha: &AlignmentDistribution,
    d_alpha: &Matrix,
) -> Result<(Matrix, Vec<f64>)> {
    let (steps, frames) = p.values().shape();
    if alpha.values().shape() != (steps, frames + 1) {
        return Err(shape_err(format!(
            "alignment is {:?}, expected {:?}",
            alpha.values().shape(),
            (steps, frames + 1)
        )));
    }
    if d_alpha.shape() != (steps, frames + 1) {
        return Err(shape_err(format!(
            "cotangent is {:?}, expected {:?}",
            d_alpha.shape(),
            (steps, frames + 1)
        )));
    }
    if alpha0.len() != frames {
        return Err(shape_err("initial alignment length differs from T"));
    }
    d_alpha.ensure_finite("alignment cotangent")?;
    Ok(alpha_backward(p.values(), alpha0, alpha.values(), d_alpha))
}

/// Reverse pass of the recurrence written as
/// `q[j] = (1 - p[j-1])·q[j-1] + α_prev[j]`, `α[j] = p[j]·q[j]`.
pub(crate) fn alpha_backward(
    p: &Matrix,
    alpha0: &[f64],
    alpha: &Matrix,
    d_alpha: &Matrix,
) -> (Matrix, Vec<f64>) {
    let (steps, frames) = p.shape();
    // The no-selection column is 1 - Σ frames; fold its cotangent in.
    let mut g = Matrix::from_fn(steps, frames, |i, j| d_alpha[(i, j)] - d_alpha[(i, frames)]);
    let mut dp = Matrix::zeros(steps, frames);
    let mut d_alpha0 = vec![0.0; frames];
    let mut q = vec![0.0; frames];
    for i in (0..steps).rev() {
        let pr = p.row(i);
        let prev: &[f64] = if i == 0 {
            alpha0
        } else {
            &alpha.row(i - 1)[..frames]
        };
        let mut acc = 0.0;
        for j in 0..frames {
            if j > 0 {
                acc *= 1.0 - pr[j - 1];
            }
            acc += prev[j];
            q[j] = acc;
        }
        let gi: Vec<f64> = g.row(i).to_vec();
        let mut d_prev = vec![0.0; frames];
        let mut carry = 0.0;
        let dpr = dp.row_mut(i);
        for j in (0..frames).rev() {
            let gq = gi[j] * pr[j] + carry;
            dpr[j] += gi[j] * q[j];
            d_prev[j] += gq;
            if j > 0 {
                dpr[j - 1] -= gq * q[j - 1];
                carry = gq * (1.0 - pr[j - 1]);
            }
        }
        if i == 0 {
            d_alpha0 = d_prev;
        } else {
            for (a, d) in g.row_mut(i - 1).iter_mut().zip(&d_prev) {
                *a += d;
            }
        }
    }
    (dp, d_alpha0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{expected_alignment, one_hot_start};

    #[test]
    fn zero_cotangent_gives_zero() {
        let p = SelectionProbabilities::new(
            Matrix::from_rows(&[[0.3, 0.6], [0.2, 0.9]]).unwrap(),
            0,
        )
        .unwrap();
        let a0 = one_hot_start(2);
        let a = expected_alignment(&p, &a0).unwrap();
        let dp = alpha_adjoint(&p, &a0, &a, &Matrix::zeros(2, 3)).unwrap();
        assert!(dp.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        let p = SelectionProbabilities::new(Matrix::from_rows(&[[0.3]]).unwrap(), 0).unwrap();
        let a0 = [0.8];
        let a = expected_alignment(&p, &a0).unwrap();
        let d = Matrix::from_rows(&[[1.7, -0.4]]).unwrap();
        let dp = alpha_adjoint(&p, &a0, &a, &d).unwrap();
        assert!((dp[(0, 0)] - (1.7 * 0.8 + 0.4 * 0.8)).abs() < 1e-15);
    }

    #[test]
    fn shape_checks() {
        let p = SelectionProbabilities::new(Matrix::from_rows(&[[0.3, 0.5]]).unwrap(), 0).unwrap();
        let a0 = one_hot_start(2);
        let a = expected_alignment(&p, &a0).unwrap();
        assert!(alpha_adjoint(&p, &a0, &a, &Matrix::zeros(1, 2)).is_err());
        let nan = Matrix::from_rows(&[[f64::NAN, 0.0, 0.0]]).unwrap();
        assert!(alpha_adjoint(&p, &a0, &a, &nan).is_err());
    }
}
