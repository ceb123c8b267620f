use std::borrow::Cow;

use super::AlignmentDistribution;
use crate::error::{invalid, shape_err, Error, Result};
use crate::matrix::Matrix;

/// Expected chunkwise attention, shape `L_out × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkAttention {
    values: Matrix,
    chunk_width: usize,
}

impl ChunkAttention {
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn chunk_width(&self) -> usize {
        self.chunk_width
    }
}

/// Anything that provides `L_out × T` weights over encoder frames.
pub trait FrameWeights {
    fn frame_weights(&self) -> Cow<'_, Matrix>;
}

impl FrameWeights for Matrix {
    fn frame_weights(&self) -> Cow<'_, Matrix> {
        Cow::Borrowed(self)
    }
}

impl FrameWeights for ChunkAttention {
    fn frame_weights(&self) -> Cow<'_, Matrix> {
        Cow::Borrowed(&self.values)
    }
}

impl FrameWeights for AlignmentDistribution {
    fn frame_weights(&self) -> Cow<'_, Matrix> {
        Cow::Owned(AlignmentDistribution::frame_weights(self))
    }
}

/// Spreads each boundary's mass over the `w` frames ending at it with a
/// softmax of `energies`:
///
/// `β[i][j] = Σ_{k=j}^{min(j+w-1, T)} a[i][k] · exp(u[i][j]) / Σ_{l=max(1,k-w+1)}^{k} exp(u[i][l])`.
///
/// Each row of `β` carries the same total as the alignment's frames.
pub fn chunk_attention(
    alignment: &AlignmentDistribution,
    energies: &Matrix,
    width: usize,
) -> Result<ChunkAttention> {
    if width < 1 {
        return Err(invalid("chunk width must be at least 1"));
    }
    let expected = (alignment.num_steps(), alignment.num_frames());
    if energies.shape() != expected {
        return Err(shape_err(format!(
            "chunk energies are {:?}, alignment frames are {:?}",
            energies.shape(),
            expected
        )));
    }
    energies.ensure_finite("chunk energies")?;
    Ok(ChunkAttention {
        values: chunk_attention_rows(alignment.values(), energies, width),
        chunk_width: width,
    })
}

/// Softmax weights over the window of frames ending at `end` (0-based).
/// Returns the window start and the weights for `start..=end`.
pub(crate) fn chunk_softmax_window(energies: &[f64], end: usize, width: usize) -> (usize, Vec<f64>) {
    let start = (end + 1).saturating_sub(width);
    let window = &energies[start..=end];
    let peak = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = window.iter().map(|u| (u - peak).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    (start, w)
}

/// `weights` may carry extra trailing columns (the no-selection column);
/// only the first `energies.cols()` are read.
pub(crate) fn chunk_attention_rows(weights: &Matrix, energies: &Matrix, width: usize) -> Matrix {
    let (steps, frames) = energies.shape();
    let mut out = Matrix::zeros(steps, frames);
    for i in 0..steps {
        let u = energies.row(i);
        let a = weights.row(i);
        let row = out.row_mut(i);
        for k in 0..frames {
            if a[k] == 0.0 {
                continue;
            }
            let (start, soft) = chunk_softmax_window(u, k, width);
            for (o, s) in row[start..=k].iter_mut().zip(&soft) {
                *o += a[k] * s;
            }
        }
    }
    out
}

/// `context[i] = Σ_j weights[i][j] · h[j]`.
pub fn expected_context<W: FrameWeights + ?Sized>(weights: &W, h: &Matrix) -> Result<Matrix> {
    let w = weights.frame_weights();
    if w.cols() != h.rows() {
        return Err(shape_err(format!(
            "weights cover {} frames but there are {} encoder states",
            w.cols(),
            h.rows()
        )));
    }
    if !h.is_finite() {
        return Err(Error::NonFinite("encoder states".into()));
    }
    w.matmul(h)
}
