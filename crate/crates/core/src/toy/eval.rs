use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::model::{argmax, sigmoid, ToyModelParams};
use super::task::Example;
use crate::decode::{chunk_context_inference, decode_sequence, DecodeModel, DecodePolicy, DecodeTrace};
use crate::error::{invalid, Result};
use crate::fmt_f64;
use crate::matrix::Matrix;
use crate::metrics::{relative_latency_with, to_milliseconds, BoundarySequence, FrameRate};

/// Greedy inference with a trained toy model: each step feeds back the
/// previously emitted token and averages every head's chunk context.
pub struct ToyDecoder<'a> {
    params: &'a ToyModelParams,
    h: Matrix,
    mono_keys: Vec<Matrix>,
    chunk_keys: Vec<Matrix>,
    prev: usize,
    state: Vec<f64>,
    probs: Vec<Vec<f64>>,
    chunk_energies: Vec<Vec<f64>>,
}

impl<'a> ToyDecoder<'a> {
    pub fn new(params: &'a ToyModelParams, frames: &Matrix) -> Result<Self> {
        let h = params.encode(frames)?;
        let m = params.config.num_heads;
        let mut mono_keys = Vec::with_capacity(m);
        let mut chunk_keys = Vec::with_capacity(m);
        for k in 0..m {
            mono_keys.push(h.matmul(&params.mono_k[k].transpose())?);
            chunk_keys.push(h.matmul(&params.chunk_k[k].transpose())?);
        }
        Ok(Self {
            params,
            h,
            mono_keys,
            chunk_keys,
            prev: params.config.bos(),
            state: Vec::new(),
            probs: Vec::new(),
            chunk_energies: Vec::new(),
        })
    }
}

fn project(w: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| w.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn scores(keys: &Matrix, query: &[f64], scale: f64, offset: f64) -> Vec<f64> {
    (0..keys.rows())
        .map(|t| scale * keys.row(t).iter().zip(query).map(|(a, b)| a * b).sum::<f64>() + offset)
        .collect()
}

impl DecodeModel for ToyDecoder<'_> {
    fn num_heads(&self) -> usize {
        self.params.config.num_heads
    }

    fn num_frames(&self) -> usize {
        self.params.config.num_frames
    }

    fn max_steps(&self) -> Option<usize> {
        Some(self.params.config.num_steps)
    }

    fn begin_step(&mut self, step: usize) -> Result<()> {
        let p = self.params;
        let scale = 1.0 / (p.config.model_dim as f64).sqrt();
        self.state = p.decoder_state(self.prev, step - 1);
        self.probs.clear();
        self.chunk_energies.clear();
        for m in 0..p.config.num_heads {
            let q = project(&p.mono_q[m], &self.state);
            let e = scores(&self.mono_keys[m], &q, scale, p.mono_bias[(0, m)]);
            self.probs.push(e.into_iter().map(sigmoid).collect());
            let cq = project(&p.chunk_q[m], &self.state);
            self.chunk_energies.push(scores(&self.chunk_keys[m], &cq, scale, 0.0));
        }
        Ok(())
    }

    fn selection_prob(&self, _step: usize, head: usize, frame: usize) -> f64 {
        self.probs[head][frame - 1]
    }

    fn emit(&mut self, _step: usize, boundaries: &[usize]) -> Result<Option<usize>> {
        let d = self.params.config.model_dim;
        let mut context = vec![0.0; d];
        let share = 1.0 / boundaries.len() as f64;
        for (m, &b) in boundaries.iter().enumerate() {
            let c = chunk_context_inference(b, &self.h, &self.chunk_energies[m], self.params.config.chunk_width)?;
            context.iter_mut().zip(c).for_each(|(x, v)| *x += share * v);
        }
        let token = argmax(&self.params.output_logits(&context, &self.state));
        self.prev = token;
        Ok(Some(token))
    }
}

/// Levenshtein distance between two token sequences.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let next = (row[j + 1] + 1).min(row[j] + 1).min(diag + usize::from(x != y));
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[b.len()]
}

/// What relative latency is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Latest-head boundaries of the same model decoded without head synchronisation.
    #[default]
    Unsynchronized,
    /// The task's gold boundaries.
    Gold,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub struct EvalOptions {
    /// Template policy; its `epsilon` is replaced by each swept value.
    pub policy: DecodePolicy,
    pub reference: ReferenceKind,
    pub frame_rate: FrameRate,
}


#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub epsilon: usize,
    /// Edit distance over reference length, summed over utterances.
    pub token_error: f64,
    /// Mean per-utterance relative latency.
    pub rel_frames: f64,
    pub rel_ms: f64,
    pub max_spread: usize,
}

fn decode(params: &ToyModelParams, ex: &Example, policy: &DecodePolicy) -> Result<DecodeTrace> {
    let mut model = ToyDecoder::new(params, &ex.frames)?;
    decode_sequence(&mut model, policy, params.config.num_steps)
}

/// Decodes every example once per `ε` and summarises quality, latency and
/// spread.
pub fn evaluate(
    checkpoint: &Checkpoint,
    examples: &[Example],
    epsilons: &[usize],
    opts: &EvalOptions,
) -> Result<Vec<TradeoffRow>> {
    if examples.is_empty() {
        return Err(invalid("no examples to evaluate"));
    }
    let params = &checkpoint.params;
    let references: Vec<Vec<usize>> = match opts.reference {
        ReferenceKind::Gold => examples.iter().map(|e| e.gold_boundaries.clone()).collect(),
        ReferenceKind::Unsynchronized => {
            let unsync = DecodePolicy {
                epsilon: usize::MAX,
                ..opts.policy
            };
            examples
                .iter()
                .map(|e| decode(params, e, &unsync).map(|t| t.latest_boundaries()))
                .collect::<Result<_>>()?
        }
    };
    let mut rows = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let policy = DecodePolicy { epsilon, ..opts.policy };
        let mut edits = 0usize;
        let mut ref_len = 0usize;
        let mut rel_sum = 0.0;
        let mut rel_count = 0usize;
        let mut max_spread = 0usize;
        for (ex, reference) in examples.iter().zip(&references) {
            let trace = decode(params, ex, &policy)?;
            edits += edit_distance(&trace.tokens(), &ex.targets);
            ref_len += ex.targets.len();
            max_spread = trace.steps.iter().map(|s| s.spread()).fold(max_spread, usize::max);
            let hyp = trace.latest_boundaries();
            if !hyp.is_empty() && !reference.is_empty() {
                let report = relative_latency_with(
                    &BoundarySequence::hypothesis(hyp)?,
                    &BoundarySequence::reference(reference.clone())?,
                    opts.frame_rate,
                )?;
                rel_sum += report.rel_frames;
                rel_count += 1;
            }
        }
        let rel_frames = if rel_count == 0 { 0.0 } else { rel_sum / rel_count as f64 };
        rows.push(TradeoffRow {
            epsilon,
            token_error: edits as f64 / ref_len.max(1) as f64,
            rel_frames,
            rel_ms: to_milliseconds(rel_frames, opts.frame_rate.reduction_factor, opts.frame_rate.shift_ms)?,
            max_spread,
        });
    }
    Ok(rows)
}

/// Trade-off rows as CSV.
pub fn tradeoff_csv(rows: &[TradeoffRow]) -> String {
    let mut out = String::from("epsilon,token_error,rel_frames,rel_ms,max_spread\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epsilon,
            fmt_f64(r.token_error),
            fmt_f64(r.rel_frames),
            fmt_f64(r.rel_ms),
            r.max_spread
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edit_distance_cases() {
        assert_eq!(edit_distance(&[], &[1, 2]), 2);
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(edit_distance(&[1, 3], &[1, 2, 3]), 1);
        assert_eq!(edit_distance(&[4, 2, 3], &[1, 2, 3]), 1);
        assert_eq!(edit_distance(&[3, 2, 1], &[1, 2, 3]), 2);
    }
}
