//! Hard head-synchronous decoding.
//!
//! At every output step each head scans frames upward from its previous
//! boundary (inclusive) and activates at the first frame whose selection
//! probability reaches the threshold. Scanning runs in lockstep over the
//! absolute frame index. Once the first head activates at frame `f₁`, the
//! remaining heads have until frame `f₁ + ε`; heads still idle after that
//! are forced. Frames are 1-based throughout this module.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;

/// Decoding state of one head between output steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadState {
    pub head_id: usize,
    /// Boundary chosen at the previous output step, 0 before the first.
    pub prev_boundary: usize,
    pub activated: bool,
    pub boundary: Option<usize>,
}

impl HeadState {
    pub fn new(head_id: usize) -> Self {
        Self {
            head_id,
            prev_boundary: 0,
            activated: false,
            boundary: None,
        }
    }

    /// Commits the current boundary and clears the activation flag.
    pub fn advance(&mut self) {
        if let Some(b) = self.boundary.take() {
            self.prev_boundary = b;
        }
        self.activated = false;
    }
}

/// Where a head that missed the waiting window is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcedPosition {
    /// The rightmost frame selected by an activated head.
    #[default]
    RightmostSelected,
    /// The most probable frame between the first activation and the
    /// right bound `f₁ + ε`.
    ArgmaxInWindow,
    /// The right bound `f₁ + ε` itself.
    RightBound,
}

/// What happens when no head activates before the end of the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndOfInput {
    /// Every head is placed on the last frame.
    #[default]
    ForceToT,
    /// Decoding stops.
    EmitEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodePolicy {
    pub epsilon: usize,
    /// Hard-decision threshold on selection probabilities, in `(0, 1)`.
    pub threshold: f64,
    pub forced_position: ForcedPosition,
    pub end_of_input: EndOfInput,
}

impl Default for DecodePolicy {
    fn default() -> Self {
        Self {
            epsilon: 8,
            threshold: 0.5,
            forced_position: ForcedPosition::RightmostSelected,
            end_of_input: EndOfInput::ForceToT,
        }
    }
}

impl DecodePolicy {
    pub fn with_epsilon(epsilon: usize) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    /// Heads decode independently; only end-of-input forcing remains.
    pub fn unsynchronized() -> Self {
        Self::with_epsilon(usize::MAX)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(invalid(format!(
                "activation threshold {} is outside (0, 1)",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Decision of one head at one output step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadDecision {
    pub boundary: usize,
    pub forced: bool,
    /// Frames inspected during the scan.
    pub scanned: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Selected(Vec<HeadDecision>),
    /// No head activated and the policy ends decoding.
    Exhausted,
}

fn checked(v: f64, head: usize, frame: usize) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(Error::Probability {
            row: head,
            col: frame,
            value: v,
        })
    }
}

/// Runs one output step of head-synchronous selection.
///
/// `prob(head, frame)` returns the selection probability of `head` at
/// 1-based `frame`. Heads must enter non-activated.
///
/// ```
/// use mcmma::decode::{hsd_step, DecodePolicy, HeadState, StepOutcome};
///
/// // Head 0 fires at frame 3; head 1 never fires and ε = 1.
/// let mut heads = [HeadState::new(0), HeadState::new(1)];
/// let fire = |head: usize, frame: usize| if head == 0 && frame == 3 { 1.0 } else { 0.0 };
/// let out = hsd_step(&mut heads, fire, &DecodePolicy::with_epsilon(1), 10)?;
/// let StepOutcome::Selected(d) = out else { unreachable!() };
/// assert_eq!((d[0].boundary, d[0].forced), (3, false));
/// assert_eq!((d[1].boundary, d[1].forced), (3, true));
/// # Ok::<(), mcmma::Error>(())
/// ```
pub fn hsd_step<P>(
    heads: &mut [HeadState],
    mut prob: P,
    policy: &DecodePolicy,
    num_frames: usize,
) -> Result<StepOutcome>
where
    P: FnMut(usize, usize) -> f64,
{
    policy.validate()?;
    if num_frames < 1 {
        return Err(invalid("T must be at least 1"));
    }
    if heads.is_empty() {
        return Err(invalid("at least one head is required"));
    }
    if let Some(h) = heads.iter().find(|h| h.activated) {
        return Err(invalid(format!("head {} entered the step activated", h.head_id)));
    }
    if let Some(h) = heads.iter().find(|h| h.prev_boundary > num_frames) {
        return Err(invalid(format!(
            "head {} has previous boundary {} beyond T = {num_frames}",
            h.head_id, h.prev_boundary
        )));
    }

    let starts: Vec<usize> = heads.iter().map(|h| h.prev_boundary.max(1)).collect();
    let mut scanned = vec![0usize; heads.len()];
    let mut first: Option<usize> = None;
    let lowest = starts.iter().copied().min().unwrap_or(1);
    for frame in lowest..=num_frames {
        if first.is_some_and(|f1| frame - f1 > policy.epsilon) {
            break;
        }
        for (m, head) in heads.iter_mut().enumerate() {
            if head.activated || starts[m] > frame {
                continue;
            }
            scanned[m] += 1;
            if checked(prob(m, frame), m, frame)? >= policy.threshold {
                head.activated = true;
                head.boundary = Some(frame);
                first.get_or_insert(frame);
            }
        }
    }

    let Some(f1) = first else {
        return match policy.end_of_input {
            EndOfInput::ForceToT => {
                let decisions = heads
                    .iter_mut()
                    .zip(&scanned)
                    .map(|(h, &s)| {
                        h.boundary = Some(num_frames);
                        HeadDecision {
                            boundary: num_frames,
                            forced: true,
                            scanned: s,
                        }
                    })
                    .collect();
                Ok(StepOutcome::Selected(decisions))
            }
            EndOfInput::EmitEnd => Ok(StepOutcome::Exhausted),
        };
    };

    let right = f1.saturating_add(policy.epsilon).min(num_frames);
    let rightmost = heads
        .iter()
        .filter_map(|h| h.boundary)
        .max()
        .expect("at least one head activated");
    let mut decisions = Vec::with_capacity(heads.len());
    for (m, head) in heads.iter_mut().enumerate() {
        let forced = !head.activated;
        if forced {
            let floor = head.prev_boundary;
            let target = match policy.forced_position {
                ForcedPosition::RightmostSelected => rightmost.max(floor),
                ForcedPosition::RightBound => right.max(floor),
                ForcedPosition::ArgmaxInWindow => {
                    let lo = f1.max(floor).max(1);
                    if lo > right {
                        floor
                    } else {
                        let mut best = (lo, f64::NEG_INFINITY);
                        for frame in lo..=right {
                            let v = checked(prob(m, frame), m, frame)?;
                            if v > best.1 {
                                best = (frame, v);
                            }
                        }
                        best.0
                    }
                }
            };
            head.boundary = Some(target);
        }
        decisions.push(HeadDecision {
            boundary: head.boundary.expect("boundary assigned"),
            forced,
            scanned: scanned[m],
        });
    }
    Ok(StepOutcome::Selected(decisions))
}

/// A source of per-step selection probabilities, optionally emitting
/// tokens once the boundaries of a step are known.
pub trait DecodeModel {
    fn num_heads(&self) -> usize;

    fn num_frames(&self) -> usize;

    /// Upper bound on output steps imposed by the model itself.
    fn max_steps(&self) -> Option<usize> {
        None
    }

    /// Called before any probability of `step` (1-based) is requested.
    fn begin_step(&mut self, _step: usize) -> Result<()> {
        Ok(())
    }

    fn selection_prob(&self, step: usize, head: usize, frame: usize) -> f64;

    /// Emits the token for `step` given each head's boundary.
    fn emit(&mut self, step: usize, boundaries: &[usize]) -> Result<Option<usize>>;

    fn is_end_token(&self, _token: usize) -> bool {
        false
    }
}

/// Selection probabilities given up front, one `L × T` matrix per head.
#[derive(Debug, Clone)]
pub struct MatrixModel {
    heads: Vec<Matrix>,
}

impl MatrixModel {
    pub fn new(heads: Vec<Matrix>) -> Result<Self> {
        let first = heads
            .first()
            .ok_or_else(|| invalid("at least one head is required"))?;
        let shape = first.shape();
        if shape.0 == 0 || shape.1 == 0 {
            return Err(invalid("probability matrices must be non-empty"));
        }
        for h in &heads {
            if h.shape() != shape {
                return Err(Error::Shape("all heads must share one shape".into()));
            }
            crate::align::check_probabilities(h)?;
        }
        Ok(Self { heads })
    }

    pub fn heads(&self) -> &[Matrix] {
        &self.heads
    }
}

impl DecodeModel for MatrixModel {
    fn num_heads(&self) -> usize {
        self.heads.len()
    }

    fn num_frames(&self) -> usize {
        self.heads[0].cols()
    }

    fn max_steps(&self) -> Option<usize> {
        Some(self.heads[0].rows())
    }

    fn selection_prob(&self, step: usize, head: usize, frame: usize) -> f64 {
        self.heads[head][(step - 1, frame - 1)]
    }

    fn emit(&mut self, _step: usize, _boundaries: &[usize]) -> Result<Option<usize>> {
        Ok(None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    EndToken,
    MaxLength,
    InputExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    /// 1-based output step.
    pub step: usize,
    pub token: Option<usize>,
    pub heads: Vec<HeadDecision>,
}

impl TraceStep {
    pub fn boundaries(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.boundary).collect()
    }

    /// Boundary of the latest head.
    pub fn latest(&self) -> usize {
        self.heads.iter().map(|h| h.boundary).max().unwrap_or(0)
    }

    pub fn spread(&self) -> usize {
        let max = self.heads.iter().map(|h| h.boundary).max().unwrap_or(0);
        let min = self.heads.iter().map(|h| h.boundary).min().unwrap_or(0);
        max - min
    }
}

/// Full record of a decoding run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeTrace {
    pub steps: Vec<TraceStep>,
    pub termination: Termination,
}

impl DecodeTrace {
    pub fn tokens(&self) -> Vec<usize> {
        self.steps.iter().filter_map(|s| s.token).collect()
    }

    /// Per-step boundary of the latest head.
    pub fn latest_boundaries(&self) -> Vec<usize> {
        self.steps.iter().map(TraceStep::latest).collect()
    }

    /// Checks spread `≤ epsilon` at every step and per-head monotonicity.
    /// Returns the number of violations of each kind.
    pub fn violations(&self, epsilon: usize) -> (usize, usize) {
        let spread = self.steps.iter().filter(|s| s.spread() > epsilon).count();
        let monotone = self
            .steps
            .windows(2)
            .map(|w| {
                w[0].heads
                    .iter()
                    .zip(&w[1].heads)
                    .filter(|(a, b)| b.boundary < a.boundary)
                    .count()
            })
            .sum();
        (spread, monotone)
    }

    /// Writes one JSON record per step:
    /// `{"step":..,"token":..,"heads":[{"boundary":..,"forced":..}],"spread":..}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.steps {
            let record = TraceRecord {
                step: s.step,
                token: s.token,
                heads: s
                    .heads
                    .iter()
                    .map(|h| HeadRecord {
                        boundary: h.boundary,
                        forced: h.forced,
                    })
                    .collect(),
                spread: s.spread(),
            };
            let line = serde_json::to_string(&record).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub token: Option<usize>,
    pub heads: Vec<HeadRecord>,
    pub spread: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadRecord {
    pub boundary: usize,
    pub forced: bool,
}

/// Parses a trace file written by [`DecodeTrace::write_jsonl`].
pub fn read_trace_records<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Greedy head-synchronous decoding of up to `max_len` steps.
pub fn decode_sequence<M: DecodeModel + ?Sized>(
    model: &mut M,
    policy: &DecodePolicy,
    max_len: usize,
) -> Result<DecodeTrace> {
    if max_len < 1 {
        return Err(invalid("max_len must be at least 1"));
    }
    policy.validate()?;
    let limit = model.max_steps().map_or(max_len, |m| m.min(max_len));
    let frames = model.num_frames();
    let mut heads: Vec<HeadState> = (0..model.num_heads()).map(HeadState::new).collect();
    let mut steps = Vec::new();
    for step in 1..=limit {
        model.begin_step(step)?;
        let outcome = {
            let m = &*model;
            hsd_step(&mut heads, |h, f| m.selection_prob(step, h, f), policy, frames)?
        };
        let decisions = match outcome {
            StepOutcome::Selected(d) => d,
            StepOutcome::Exhausted => {
                return Ok(DecodeTrace {
                    steps,
                    termination: Termination::InputExhausted,
                })
            }
        };
        let boundaries: Vec<usize> = decisions.iter().map(|d| d.boundary).collect();
        let token = model.emit(step, &boundaries)?;
        heads.iter_mut().for_each(HeadState::advance);
        steps.push(TraceStep {
            step,
            token,
            heads: decisions,
        });
        if token.is_some_and(|t| model.is_end_token(t)) {
            return Ok(DecodeTrace {
                steps,
                termination: Termination::EndToken,
            });
        }
    }
    Ok(DecodeTrace {
        steps,
        termination: Termination::MaxLength,
    })
}

/// Context at inference: softmax of `energies` over the `width` frames
/// ending at `boundary`, then the weighted sum of encoder states.
pub fn chunk_context_inference(
    boundary: usize,
    h: &Matrix,
    energies: &[f64],
    width: usize,
) -> Result<Vec<f64>> {
    if width < 1 {
        return Err(invalid("chunk width must be at least 1"));
    }
    if boundary < 1 || boundary > h.rows() || energies.len() != h.rows() {
        return Err(Error::OutOfRange(format!(
            "boundary {boundary} outside 1..={} or energy length mismatch",
            h.rows()
        )));
    }
    let (start, soft) = crate::align::chunk_softmax_window(energies, boundary - 1, width);
    let mut ctx = vec![0.0; h.cols()];
    for (offset, w) in soft.iter().enumerate() {
        for (c, v) in ctx.iter_mut().zip(h.row(start + offset)) {
            *c += w * v;
        }
    }
    Ok(ctx)
}
