use crate::error::{invalid, Error, Result};

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central-difference gradient of `f` at `params`.
pub fn numeric_gradient<F>(f: F, params: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let mut x = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        x[i] = params[i] + step;
        let plus = f(&x);
        x[i] = params[i] - step;
        let minus = f(&x);
        x[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "forward value at coordinate {i}"
            )));
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// Largest relative error between `analytic` and the central-difference
/// gradient of `f` at `params`.
///
/// ```
/// use mcmma::grad::finite_diff_check;
///
/// let x = [0.5, -1.5, 2.0];
/// let analytic: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
/// let err = finite_diff_check(|v| v.iter().map(|a| a * a).sum(), &x, &analytic, 1e-5)?;
/// assert!(err <= 1e-9);
/// # Ok::<(), mcmma::Error>(())
/// ```
pub fn finite_diff_check<F>(f: F, params: &[f64], analytic: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if analytic.len() != params.len() {
        return Err(invalid("analytic gradient length differs from parameters"));
    }
    let numeric = numeric_gradient(f, params, step)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_error() {
        let err = finite_diff_check(|_| 3.0, &[1.0, 2.0], &[0.0, 0.0], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let r = finite_diff_check(|v| (v[0] - 1.0).ln(), &[1.0], &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn bad_step_rejected() {
        assert!(numeric_gradient(|v| v[0], &[1.0], 0.0).is_err());
    }
}
