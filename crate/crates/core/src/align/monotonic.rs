use super::{AlignmentDistribution, AlignmentKind, SelectionProbabilities};
use crate::error::{invalid, shape_err, Result};
use crate::matrix::Matrix;

/// Floor applied to running products of `1 - p` in the scan kernel.
const CUMPROD_FLOOR: f64 = 1e-30;

/// Evaluation strategy for the monotonic expectation recurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaKernel {
    /// Quadratic double loop that follows the recurrence term by term.
    #[default]
    Direct,
    /// Linear scan using exclusive cumulative products of `1 - p`.
    CumulativeProduct,
}

/// Initial alignment with all mass on frame 1.
pub fn one_hot_start(num_frames: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_frames];
    if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
    v
}

/// Expected alignment of a monotonic attention head,
///
/// `α[i][j] = p[i][j] · Σ_{k ≤ j} α[i-1][k] · Π_{l=k}^{j-1} (1 - p[i][l])`,
///
/// with `α[0] = alpha0` and the no-selection column `α[i][T+1] = 1 - Σ_j α[i][j]`.
/// `alpha0` may carry less than unit mass.
///
/// ```
/// use mcmma::align::{expected_alignment, one_hot_start, SelectionProbabilities};
/// use mcmma::Matrix;
///
/// let p = SelectionProbabilities::new(Matrix::from_rows(&[[0.5, 0.5]])?, 0)?;
/// let alpha = expected_alignment(&p, &one_hot_start(2))?;
/// assert_eq!(alpha.row(0), &[0.5, 0.25, 0.25]);
/// # Ok::<(), mcmma::Error>(())
/// ```
pub fn expected_alignment(
    p: &SelectionProbabilities,
    alpha0: &[f64],
) -> Result<AlignmentDistribution> {
    expected_alignment_with(p, alpha0, AlphaKernel::Direct)
}

pub fn expected_alignment_with(
    p: &SelectionProbabilities,
    alpha0: &[f64],
    kernel: AlphaKernel,
) -> Result<AlignmentDistribution> {
    validate_initial(alpha0, p.num_frames())?;
    let values = match kernel {
        AlphaKernel::Direct => alpha_direct(p.values(), alpha0),
        AlphaKernel::CumulativeProduct => alpha_running(p.values(), alpha0),
    };
    Ok(AlignmentDistribution::from_raw(
        values,
        AlignmentKind::UnconstrainedAlpha,
    ))
}

pub(crate) fn validate_initial(alpha0: &[f64], num_frames: usize) -> Result<()> {
    if alpha0.len() != num_frames {
        return Err(shape_err(format!(
            "initial alignment has {} entries, expected T = {num_frames}",
            alpha0.len()
        )));
    }
    if let Some(v) = alpha0.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(invalid(format!("initial alignment entry {v} is not a probability")));
    }
    let total: f64 = alpha0.iter().sum();
    if total > 1.0 + 1e-9 {
        return Err(invalid(format!("initial alignment sums to {total} > 1")));
    }
    Ok(())
}

pub(crate) fn alpha_direct(p: &Matrix, alpha0: &[f64]) -> Matrix {
    let (steps, frames) = p.shape();
    let mut out = Matrix::zeros(steps, frames + 1);
    let mut prev = alpha0.to_vec();
    for i in 0..steps {
        let pr = p.row(i);
        let row = out.row_mut(i);
        for j in 0..frames {
            let mut acc = 0.0;
            for (k, &a) in prev.iter().enumerate().take(j + 1) {
                let skip: f64 = pr[k..j].iter().map(|q| 1.0 - q).product();
                acc += a * skip;
            }
            row[j] = pr[j] * acc;
        }
        row[frames] = 1.0 - row[..frames].iter().sum::<f64>();
        prev.copy_from_slice(&row[..frames]);
    }
    out
}

/// `α[i][j] = p[i][j] · c[j] · Σ_{k ≤ j} α[i-1][k] / c[k]` with `c` the
/// exclusive cumulative product of `1 - p[i]`, floored at 1e-30.
pub(crate) fn alpha_running(p: &Matrix, alpha0: &[f64]) -> Matrix {
    let (steps, frames) = p.shape();
    let mut out = Matrix::zeros(steps, frames + 1);
    let mut prev = alpha0.to_vec();
    let mut cumprod = vec![0.0; frames];
    for i in 0..steps {
        let pr = p.row(i);
        let mut c = 1.0;
        for (j, slot) in cumprod.iter_mut().enumerate() {
            *slot = f64::max(c, CUMPROD_FLOOR);
            c *= 1.0 - pr[j];
        }
        let row = out.row_mut(i);
        let mut scan = 0.0;
        for j in 0..frames {
            scan += prev[j] / cumprod[j];
            row[j] = pr[j] * cumprod[j] * scan;
        }
        row[frames] = 1.0 - row[..frames].iter().sum::<f64>();
        prev.copy_from_slice(&row[..frames]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn probs(rows: &[Vec<f64>]) -> SelectionProbabilities {
        SelectionProbabilities::new(Matrix::from_rows(rows).unwrap(), 0).unwrap()
    }

    #[test]
    fn certain_selection_never_advances() {
        let p = probs(&vec![vec![1.0; 4]; 3]);
        let a = expected_alignment(&p, &one_hot_start(4)).unwrap();
        for i in 0..3 {
            assert_eq!(a.row(i), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn zero_probabilities_never_select() {
        let p = probs(&vec![vec![0.0; 3]; 2]);
        let a = expected_alignment(&p, &one_hot_start(3)).unwrap();
        for i in 0..2 {
            assert_eq!(a.row(i), &[0.0, 0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn two_frame_example() {
        let p = probs(&[vec![0.5, 0.5]]);
        for kernel in [AlphaKernel::Direct, AlphaKernel::CumulativeProduct] {
            let a = expected_alignment_with(&p, &one_hot_start(2), kernel).unwrap();
            assert_eq!(a.row(0), &[0.5, 0.25, 0.25]);
        }
    }

    #[test]
    fn initial_alignment_is_validated() {
        let p = probs(&[vec![0.5, 0.5]]);
        assert!(expected_alignment(&p, &[0.7, 0.7]).is_err());
        assert!(expected_alignment(&p, &[1.0]).is_err());
        assert!(expected_alignment(&p, &[-0.1, 0.5]).is_err());
        assert!(expected_alignment(&p, &[0.3, 0.3]).is_ok());
    }

    proptest! {
        #[test]
        fn kernels_agree(
            steps in 1usize..5,
            frames in 1usize..12,
            seed in prop::collection::vec(0.02f64..0.98, 60),
        ) {
            let rows: Vec<Vec<f64>> = (0..steps)
                .map(|i| (0..frames).map(|j| seed[(i * frames + j) % seed.len()]).collect())
                .collect();
            let p = probs(&rows);
            let a = expected_alignment_with(&p, &one_hot_start(frames), AlphaKernel::Direct).unwrap();
            let b = expected_alignment_with(&p, &one_hot_start(frames), AlphaKernel::CumulativeProduct).unwrap();
            prop_assert!(a.values().max_abs_diff(b.values()).unwrap() <= 1e-10);
            prop_assert!(a.max_row_sum_error() <= 1e-12);
            prop_assert!(a.values().as_slice().iter().all(|&v| v >= -1e-12));
        }
    }
}
