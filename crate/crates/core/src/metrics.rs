//! Relative latency and head-spread measurements.

use serde::{Deserialize, Serialize};

use crate::decode::DecodeTrace;
use crate::error::{invalid, Result};
use crate::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySource {
    Hypothesis,
    Reference,
}

/// Per-step boundary of the latest head, non-decreasing and 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundarySequence {
    boundaries: Vec<usize>,
    source: BoundarySource,
}

impl BoundarySequence {
    pub fn new(boundaries: Vec<usize>, source: BoundarySource) -> Result<Self> {
        if boundaries.contains(&0) {
            return Err(invalid("boundaries are 1-based frame indices"));
        }
        if boundaries.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("boundaries must be non-decreasing"));
        }
        Ok(Self { boundaries, source })
    }

    pub fn hypothesis(boundaries: Vec<usize>) -> Result<Self> {
        Self::new(boundaries, BoundarySource::Hypothesis)
    }

    pub fn reference(boundaries: Vec<usize>) -> Result<Self> {
        Self::new(boundaries, BoundarySource::Reference)
    }

    /// Latest-head boundaries of a decode.
    pub fn from_trace(trace: &DecodeTrace, source: BoundarySource) -> Result<Self> {
        Self::new(trace.latest_boundaries(), source)
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn source(&self) -> BoundarySource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }
}

/// Frame-rate parameters for converting frame latency to time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRate {
    /// Encoder downsampling factor.
    pub reduction_factor: usize,
    /// Input frame shift in milliseconds.
    pub shift_ms: f64,
}

impl Default for FrameRate {
    /// Factor 8 at a 10 ms shift: one encoder frame is 80 ms.
    fn default() -> Self {
        Self {
            reduction_factor: 8,
            shift_ms: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub rel_frames: f64,
    pub rel_ms: f64,
    pub l_min: usize,
    pub per_step_diffs: Vec<f64>,
    pub hypothesis: Vec<usize>,
    pub reference: Vec<usize>,
}

impl LatencyReport {
    /// `step,b_hyp,b_ref,diff` rows for the first `L_min` steps followed by
    /// a `# rel_frames=… rel_ms=…` summary line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,b_hyp,b_ref,diff\n");
        for i in 0..self.l_min {
            s.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                self.hypothesis[i],
                self.reference[i],
                self.per_step_diffs[i]
            ));
        }
        s.push_str(&format!(
            "# rel_frames={} rel_ms={}\n",
            fmt_f64(self.rel_frames),
            fmt_f64(self.rel_ms)
        ));
        s
    }
}

/// Mean signed gap between hypothesis and reference boundaries over the
/// first `min(|b_hyp|, |b_ref|)` steps, converted at the default frame rate.
///
/// ```
/// use mcmma::metrics::{relative_latency, BoundarySequence};
///
/// let hyp = BoundarySequence::hypothesis(vec![3, 6, 9])?;
/// let reference = BoundarySequence::reference(vec![2, 5, 7])?;
/// let report = relative_latency(&hyp, &reference)?;
/// assert!((report.rel_frames - 4.0 / 3.0).abs() < 1e-12);
/// # Ok::<(), mcmma::Error>(())
/// ```
pub fn relative_latency(hyp: &BoundarySequence, reference: &BoundarySequence) -> Result<LatencyReport> {
    relative_latency_with(hyp, reference, FrameRate::default())
}

pub fn relative_latency_with(
    hyp: &BoundarySequence,
    reference: &BoundarySequence,
    rate: FrameRate,
) -> Result<LatencyReport> {
    if hyp.is_empty() || reference.is_empty() {
        return Err(invalid("relative latency needs non-empty boundary sequences"));
    }
    let l_min = hyp.len().min(reference.len());
    let per_step_diffs: Vec<f64> = hyp.boundaries[..l_min]
        .iter()
        .zip(&reference.boundaries[..l_min])
        .map(|(&h, &r)| h as f64 - r as f64)
        .collect();
    let rel_frames = per_step_diffs.iter().sum::<f64>() / l_min as f64;
    Ok(LatencyReport {
        rel_frames,
        rel_ms: to_milliseconds(rel_frames, rate.reduction_factor, rate.shift_ms)?,
        l_min,
        per_step_diffs,
        hypothesis: hyp.boundaries.clone(),
        reference: reference.boundaries.clone(),
    })
}

/// `rel_frames · reduction_factor · shift_ms`.
pub fn to_milliseconds(rel_frames: f64, reduction_factor: usize, shift_ms: f64) -> Result<f64> {
    if reduction_factor < 1 {
        return Err(invalid("reduction factor must be at least 1"));
    }
    if !(shift_ms > 0.0) {
        return Err(invalid("frame shift must be positive"));
    }
    Ok(rel_frames * reduction_factor as f64 * shift_ms)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpreadSummary {
    pub per_step: Vec<usize>,
    pub max: usize,
}

/// `max_m boundary − min_m boundary` at every step of a decode.
pub fn boundary_spread(trace: &DecodeTrace) -> Result<SpreadSummary> {
    if trace.steps.is_empty() {
        return Err(invalid("spread of an empty trace"));
    }
    let per_step: Vec<usize> = trace.steps.iter().map(|s| s.spread()).collect();
    let max = per_step.iter().copied().max().unwrap_or(0);
    Ok(SpreadSummary { per_step, max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::{HeadDecision, Termination, TraceStep};
    use proptest::prelude::*;

    fn seq(b: &[usize]) -> BoundarySequence {
        BoundarySequence::hypothesis(b.to_vec()).unwrap()
    }

    fn trace(steps: &[&[usize]]) -> DecodeTrace {
        DecodeTrace {
            steps: steps
                .iter()
                .enumerate()
                .map(|(i, b)| TraceStep {
                    step: i + 1,
                    token: None,
                    heads: b
                        .iter()
                        .map(|&boundary| HeadDecision {
                            boundary,
                            forced: false,
                            scanned: 1,
                        })
                        .collect(),
                })
                .collect(),
            termination: Termination::MaxLength,
        }
    }

    #[test]
    fn identical_sequences_have_zero_latency() {
        let r = relative_latency(&seq(&[1, 4, 4, 9]), &seq(&[1, 4, 4, 9])).unwrap();
        assert_eq!(r.rel_frames, 0.0);
        assert_eq!(r.rel_ms, 0.0);
    }

    #[test]
    fn truncates_to_shorter_sequence() {
        let r = relative_latency(&seq(&[5, 7]), &seq(&[1, 2, 3, 4, 5])).unwrap();
        assert_eq!(r.l_min, 2);
        assert_eq!(r.per_step_diffs, vec![4.0, 5.0]);
        assert_eq!(r.rel_frames, 4.5);
    }

    #[test]
    fn milliseconds() {
        assert_eq!(to_milliseconds(1.0, 8, 10.0).unwrap(), 80.0);
        assert_eq!(to_milliseconds(0.0, 8, 10.0).unwrap(), 0.0);
        assert!((to_milliseconds(4.0 / 3.0, 8, 10.0).unwrap() - 106.666_666_666_666_67).abs() < 1e-12);
        assert!(to_milliseconds(1.0, 0, 10.0).is_err());
        assert!(to_milliseconds(1.0, 8, 0.0).is_err());
    }

    #[test]
    fn sequence_validation() {
        assert!(BoundarySequence::hypothesis(vec![3, 2]).is_err());
        assert!(BoundarySequence::hypothesis(vec![0, 2]).is_err());
        assert!(relative_latency(&seq(&[]), &seq(&[1])).is_err());
    }

    #[test]
    fn spreads() {
        let s = boundary_spread(&trace(&[&[3, 5], &[6, 6]])).unwrap();
        assert_eq!(s.per_step, vec![2, 0]);
        assert_eq!(s.max, 2);
        let single = boundary_spread(&trace(&[&[3], &[7]])).unwrap();
        assert_eq!(single.max, 0);
        assert!(boundary_spread(&trace(&[])).is_err());
    }

    #[test]
    fn csv_layout() {
        let r = relative_latency(&seq(&[3, 6, 9]), &seq(&[2, 5, 7])).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,b_hyp,b_ref,diff");
        assert_eq!(lines[3], "3,9,7,2");
        assert!(lines[4].starts_with("# rel_frames=1.3333333333333333e0"));
    }

    proptest! {
        #[test]
        fn translation_covariant(
            base in prop::collection::vec(1usize..5, 1..12),
            refs in prop::collection::vec(1usize..5, 1..12),
            shift in 0usize..20,
        ) {
            let cum = |v: &[usize]| v.iter().scan(0, |a, x| { *a += x; Some(*a) }).collect::<Vec<_>>();
            let hyp = cum(&base);
            let reference = BoundarySequence::reference(cum(&refs)).unwrap();
            let shifted: Vec<usize> = hyp.iter().map(|b| b + shift).collect();
            let a = relative_latency(&seq(&hyp), &reference).unwrap();
            let b = relative_latency(&seq(&shifted), &reference).unwrap();
            prop_assert!((b.rel_frames - a.rel_frames - shift as f64).abs() < 1e-9);
            let same = relative_latency(&seq(&hyp), &BoundarySequence::reference(hyp.clone()).unwrap()).unwrap();
            prop_assert_eq!(same.rel_frames, 0.0);
        }
    }
}
