//! One monotonic multihead attention layer, end to end:
//! `p → α → (γ̂ | δ̂) → chunk attention → context`, per head.

use serde::{Deserialize, Serialize};

use super::{alpha_backward, chunk_backward, context_backward, mutual_backward, self_backward};
use crate::align::{alpha_direct, chunk_attention_rows, check_probabilities, mutual_rows, self_rows};
use crate::error::{invalid, shape_err, Result};
use crate::matrix::Matrix;

/// Which expectation feeds the chunk attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AttentionMode {
    Unconstrained,
    SelfConstrained { epsilon: usize },
    MutuallyConstrained { epsilon: usize },
}

/// Cotangents for every input of [`layer_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    /// `∂loss/∂p`, one `L_out × T` matrix per head.
    pub d_p: Vec<Matrix>,
    /// `∂loss/∂u` (chunk energies), one `L_out × T` matrix per head.
    pub d_u: Vec<Matrix>,
    /// `∂loss/∂h`, `T × d`.
    pub d_h: Matrix,
}

/// Intermediate values of a forward pass, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerForward {
    pub alphas: Vec<Matrix>,
    /// The expectation actually used: `α`, `γ̂` or `δ̂`, `L_out × (T+1)`.
    pub weights: Vec<Matrix>,
    pub betas: Vec<Matrix>,
    pub contexts: Vec<Matrix>,
}

fn check_inputs(p: &[Matrix], u: &[Matrix], h: &Matrix, alpha0: &[f64], width: usize) -> Result<()> {
    if p.is_empty() || p.len() != u.len() {
        return Err(shape_err(format!("{} probability heads, {} energy heads", p.len(), u.len())));
    }
    if width < 1 {
        return Err(invalid("chunk width must be at least 1"));
    }
    let shape = p[0].shape();
    if shape.0 == 0 || shape.1 == 0 {
        return Err(shape_err("empty probability matrix"));
    }
    for (pm, um) in p.iter().zip(u) {
        if pm.shape() != shape || um.shape() != shape {
            return Err(shape_err("all heads must share the L_out x T shape"));
        }
        check_probabilities(pm)?;
        um.ensure_finite("chunk energies")?;
    }
    if h.rows() != shape.1 || alpha0.len() != shape.1 {
        return Err(shape_err("encoder states and initial alignment must have T rows"));
    }
    Ok(())
}

pub fn layer_forward(
    p: &[Matrix],
    u: &[Matrix],
    h: &Matrix,
    alpha0: &[f64],
    mode: AttentionMode,
    chunk_width: usize,
) -> Result<LayerForward> {
    check_inputs(p, u, h, alpha0, chunk_width)?;
    let alphas: Vec<Matrix> = p.iter().map(|pm| alpha_direct(pm, alpha0)).collect();
    let weights = match mode {
        AttentionMode::Unconstrained => alphas.clone(),
        AttentionMode::SelfConstrained { epsilon } => {
            alphas.iter().map(|a| self_rows(a, epsilon)).collect()
        }
        AttentionMode::MutuallyConstrained { epsilon } => {
            let refs: Vec<&Matrix> = alphas.iter().collect();
            mutual_rows(&refs, epsilon)
        }
    };
    let betas: Vec<Matrix> = weights
        .iter()
        .zip(u)
        .map(|(w, um)| chunk_attention_rows(w, um, chunk_width))
        .collect();
    let contexts = betas
        .iter()
        .map(|b| b.matmul(h))
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerForward {
        alphas,
        weights,
        betas,
        contexts,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn layer_backward(
    p: &[Matrix],
    u: &[Matrix],
    h: &Matrix,
    alpha0: &[f64],
    mode: AttentionMode,
    chunk_width: usize,
    fwd: &LayerForward,
    d_contexts: &[Matrix],
) -> Result<GradientBundle> {
    check_inputs(p, u, h, alpha0, chunk_width)?;
    if d_contexts.len() != p.len() {
        return Err(shape_err("one context cotangent per head is required"));
    }
    let frames = h.rows();
    let mut d_h = Matrix::zeros(h.rows(), h.cols());
    let mut d_u = Vec::with_capacity(p.len());
    let mut d_weights = Vec::with_capacity(p.len());
    for m in 0..p.len() {
        if d_contexts[m].shape() != fwd.contexts[m].shape() {
            return Err(shape_err("context cotangent shape differs from the context"));
        }
        let (d_beta, d_hm) = context_backward(&fwd.betas[m], h, &d_contexts[m]);
        d_h.add_scaled(&d_hm, 1.0);
        let (d_w, d_um) = chunk_backward(&fwd.weights[m], &u[m], chunk_width, &d_beta);
        d_u.push(d_um);
        // Widen to the alignment shape; the chunk never reads column T.
        let steps = d_w.rows();
        d_weights.push(Matrix::from_fn(steps, frames + 1, |i, j| {
            if j < frames {
                d_w[(i, j)]
            } else {
                0.0
            }
        }));
    }
    let d_alphas: Vec<Matrix> = match mode {
        AttentionMode::Unconstrained => d_weights,
        AttentionMode::SelfConstrained { epsilon } => fwd
            .alphas
            .iter()
            .zip(&d_weights)
            .map(|(a, d)| self_backward(a, epsilon, d))
            .collect(),
        AttentionMode::MutuallyConstrained { epsilon } => {
            let a: Vec<&Matrix> = fwd.alphas.iter().collect();
            let d: Vec<&Matrix> = d_weights.iter().collect();
            mutual_backward(&a, epsilon, &d)
        }
    };
    let d_p = p
        .iter()
        .zip(&fwd.alphas)
        .zip(&d_alphas)
        .map(|((pm, a), d)| alpha_backward(pm, alpha0, a, d).0)
        .collect();
    Ok(GradientBundle { d_p, d_u, d_h })
}
