//! Expected-alignment calculus for monotonic attention heads.
//!
//! Frames are addressed 1-based in the public API (`1..=T`, with `T + 1`
//! reserved for "no selection"); matrices are stored 0-based, so column
//! `j - 1` holds frame `j` and column `T` holds the no-selection mass.

mod chunk;
mod constrained;
mod monotonic;

pub use chunk::{chunk_attention, expected_context, ChunkAttention, FrameWeights};
pub use constrained::{constrain, mutually_constrained, self_constrained};
pub use monotonic::{expected_alignment, expected_alignment_with, one_hot_start, AlphaKernel};

pub(crate) use chunk::{chunk_attention_rows, chunk_softmax_window};
pub(crate) use constrained::{mutual_rows, others_product, remainders, self_rows};
pub(crate) use monotonic::alpha_direct;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::matrix::Matrix;

/// Rounding slack tolerated when a remainder `1 - Σ α` dips below zero.
pub const REMAINDER_CLAMP: f64 = 1e-12;

/// Per-head selection probabilities `p[i][j]`, shape `L_out × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionProbabilities {
    values: Matrix,
    head: usize,
}

impl SelectionProbabilities {
    /// Validates that every entry lies in `[0, 1]` and both dimensions are
    /// at least one. `head` is the 0-based head index within its layer.
    pub fn new(values: Matrix, head: usize) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(shape_err(format!(
                "selection probabilities need L_out >= 1 and T >= 1, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        check_probabilities(&values)?;
        Ok(Self { values, head })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn head(&self) -> usize {
        self.head
    }

    pub fn num_steps(&self) -> usize {
        self.values.rows()
    }

    pub fn num_frames(&self) -> usize {
        self.values.cols()
    }
}

pub(crate) fn check_probabilities(values: &Matrix) -> Result<()> {
    for i in 0..values.rows() {
        for (j, &v) in values.row(i).iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Probability {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

/// Which expectation an [`AlignmentDistribution`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentKind {
    /// Unconstrained monotonic-attention expectation `α`.
    UnconstrainedAlpha,
    /// Expectation under a waiting threshold relative to the head's own
    /// previous boundary (`γ̂`).
    SelfConstrainedGamma,
    /// Expectation under a waiting threshold relative to the other heads
    /// of the layer (`δ̂`).
    MutuallyConstrainedDelta,
}

/// Expected alignment of one head: `L_out × (T + 1)`, last column is the
/// probability of not selecting any frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentDistribution {
    values: Matrix,
    kind: AlignmentKind,
}

impl AlignmentDistribution {
    /// Wraps an `L_out × (T + 1)` matrix. Entries must be finite and not
    /// below `-1e-12`.
    pub fn new(values: Matrix, kind: AlignmentKind) -> Result<Self> {
        if values.rows() == 0 || values.cols() < 2 {
            return Err(shape_err(format!(
                "alignment needs at least one step and one frame, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        values.ensure_finite("alignment")?;
        if let Some(v) = values.as_slice().iter().find(|&&v| v < -REMAINDER_CLAMP) {
            return Err(invalid(format!("negative alignment entry {v}")));
        }
        Ok(Self { values, kind })
    }

    pub(crate) fn from_raw(values: Matrix, kind: AlignmentKind) -> Self {
        Self { values, kind }
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }

    pub fn kind(&self) -> AlignmentKind {
        self.kind
    }

    pub fn num_steps(&self) -> usize {
        self.values.rows()
    }

    pub fn num_frames(&self) -> usize {
        self.values.cols() - 1
    }

    /// Weights over frames `1..=T` only.
    pub fn frame_weights(&self) -> Matrix {
        self.values.leading_columns(self.num_frames())
    }

    /// Row `step` (0-based) including the no-selection column.
    pub fn row(&self, step: usize) -> &[f64] {
        self.values.row(step)
    }

    /// Probability that the head has not selected any of frames `1..=frame`
    /// at output step `step`: `B_step(frame) = 1 - Σ_{k ≤ frame} values[step][k]`.
    ///
    /// `step` is 1-based; step 0 is the boundary convention `B_0(·) = 1`.
    /// `frame` ranges over `0..=T`; frame 0 is the empty sum.
    pub fn remainder(&self, step: usize, frame: usize) -> Result<f64> {
        if step > self.num_steps() {
            return Err(Error::OutOfRange(format!(
                "step {step} exceeds L_out = {}",
                self.num_steps()
            )));
        }
        if frame > self.num_frames() {
            return Err(Error::OutOfRange(format!(
                "frame {frame} exceeds T = {}",
                self.num_frames()
            )));
        }
        if step == 0 {
            return Ok(1.0);
        }
        let row = &self.values.row(step - 1)[..frame];
        Ok(clamp_remainder(1.0 - row.iter().sum::<f64>()))
    }

    /// Largest deviation of any row total (all `T + 1` columns) from one.
    pub fn max_row_sum_error(&self) -> f64 {
        self.values
            .iter_rows()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[inline]
pub(crate) fn clamp_remainder(x: f64) -> f64 {
    if x < 0.0 && x > -REMAINDER_CLAMP {
        0.0
    } else {
        x
    }
}

/// Whether constrained alignments are relative to the head's own history
/// or to the other heads of the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    SelfConstrained,
    MutuallyConstrained,
}

/// Waiting threshold and head count for the constrained expectations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintConfig {
    /// Waiting threshold `ε` in frames.
    pub epsilon: usize,
    pub num_heads: usize,
    pub mode: ConstraintMode,
}

impl ConstraintConfig {
    pub fn new(epsilon: usize, num_heads: usize, mode: ConstraintMode) -> Result<Self> {
        let cfg = Self {
            epsilon,
            num_heads,
            mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mutual(epsilon: usize, num_heads: usize) -> Self {
        Self {
            epsilon,
            num_heads,
            mode: ConstraintMode::MutuallyConstrained,
        }
    }

    pub fn self_constrained(epsilon: usize) -> Self {
        Self {
            epsilon,
            num_heads: 1,
            mode: ConstraintMode::SelfConstrained,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads < 1 {
            return Err(invalid("number of heads must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_row() -> AlignmentDistribution {
        AlignmentDistribution::new(
            Matrix::from_rows(&[[0.5, 0.25, 0.25]]).unwrap(),
            AlignmentKind::UnconstrainedAlpha,
        )
        .unwrap()
    }

    #[test]
    fn remainder_empty_sum_is_one() {
        let a = example_row();
        assert_eq!(a.remainder(1, 0).unwrap(), 1.0);
        assert_eq!(a.remainder(0, 2).unwrap(), 1.0);
    }

    #[test]
    fn remainder_direct_value() {
        assert_eq!(example_row().remainder(1, 2).unwrap(), 0.25);
    }

    #[test]
    fn remainder_of_full_mass_is_zero() {
        let a = AlignmentDistribution::new(
            Matrix::from_rows(&[[0.1, 0.2, 0.3, 0.4, 0.0]]).unwrap(),
            AlignmentKind::UnconstrainedAlpha,
        )
        .unwrap();
        assert_eq!(a.remainder(1, 4).unwrap(), 0.0);
    }

    #[test]
    fn remainder_index_errors() {
        let a = example_row();
        assert!(matches!(a.remainder(1, 3), Err(Error::OutOfRange(_))));
        assert!(matches!(a.remainder(2, 0), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn probabilities_are_validated() {
        let bad = Matrix::from_rows(&[[0.5, 1.5]]).unwrap();
        assert!(matches!(
            SelectionProbabilities::new(bad, 0),
            Err(Error::Probability { col: 1, .. })
        ));
        assert!(SelectionProbabilities::new(Matrix::zeros(0, 3), 0).is_err());
    }

    #[test]
    fn zero_heads_rejected() {
        assert!(ConstraintConfig::new(1, 0, ConstraintMode::MutuallyConstrained).is_err());
    }
}
