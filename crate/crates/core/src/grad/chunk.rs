use crate::align::{chunk_softmax_window, ChunkAttention, FrameWeights};
use crate::error::{invalid, shape_err, Result};
use crate::matrix::Matrix;

/// Cotangents of the boundary weights and chunk energies given a
/// cotangent on the chunk attention `β`. `weights` holds the frame
/// weights (`L_out × T`) that were fed to the forward pass.
pub fn chunk_adjoint(
    weights: &Matrix,
    energies: &Matrix,
    beta: &ChunkAttention,
    d_beta: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let shape = energies.shape();
    if beta.values().shape() != shape || d_beta.shape() != shape || weights.rows() != shape.0 {
        return Err(shape_err("chunk attention, energies and cotangent must agree"));
    }
    if weights.cols() < shape.1 {
        return Err(shape_err("weights cover fewer frames than the energies"));
    }
    if beta.chunk_width() < 1 {
        return Err(invalid("chunk width must be at least 1"));
    }
    d_beta.ensure_finite("chunk cotangent")?;
    Ok(chunk_backward(weights, energies, beta.chunk_width(), d_beta))
}

pub(crate) fn chunk_backward(
    weights: &Matrix,
    energies: &Matrix,
    width: usize,
    d_beta: &Matrix,
) -> (Matrix, Matrix) {
    let (steps, frames) = energies.shape();
    let mut d_w = Matrix::zeros(steps, frames);
    let mut d_u = Matrix::zeros(steps, frames);
    for i in 0..steps {
        let u = energies.row(i);
        let a = weights.row(i);
        let g = d_beta.row(i);
        for k in 0..frames {
            let (start, soft) = chunk_softmax_window(u, k, width);
            let window = &g[start..=k];
            let dot: f64 = soft.iter().zip(window).map(|(s, gv)| s * gv).sum();
            d_w[(i, k)] = dot;
            if a[k] != 0.0 {
                for (offset, (s, gv)) in soft.iter().zip(window).enumerate() {
                    d_u[(i, start + offset)] += a[k] * s * (gv - dot);
                }
            }
        }
    }
    (d_w, d_u)
}

/// Cotangents of the weights and encoder states for `context = W·H`.
pub fn context_adjoint<W: FrameWeights + ?Sized>(
    weights: &W,
    h: &Matrix,
    d_context: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let w = weights.frame_weights();
    if w.cols() != h.rows() || d_context.shape() != (w.rows(), h.cols()) {
        return Err(shape_err("context cotangent does not match weights and states"));
    }
    d_context.ensure_finite("context cotangent")?;
    Ok(context_backward(&w, h, d_context))
}

pub(crate) fn context_backward(w: &Matrix, h: &Matrix, d_context: &Matrix) -> (Matrix, Matrix) {
    let d_w = d_context
        .matmul(&h.transpose())
        .expect("shapes checked by caller");
    let d_h = w.transpose().matmul(d_context).expect("shapes checked by caller");
    (d_w, d_h)
}
