//! A tiny encoder-decoder whose only path from input to output runs
//! through monotonic multihead attention.
//!
//! * encoder: `h_t = tanh(W_enc x_t + b_enc + P_enc[t])`
//! * decoder state: `s_i = E_dec[y_{i-1}] + P_dec[i]` (teacher forced,
//!   `y_0` is a begin-of-sequence symbol)
//! * head `m`: `p = σ((W_q s)·(W_k h)/√d + b_m)`, chunk energies
//!   `u = (C_q s)·(C_k h)/√d`
//! * the heads' chunk contexts are averaged over the surviving heads and
//!   `logits = W_c c + W_s s + b_out`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::task::Example;
use crate::align::{one_hot_start, AlignmentDistribution, AlignmentKind};
use crate::error::{invalid, shape_err, Error, Result};
use crate::grad::{layer_backward, layer_forward, AttentionMode, LayerForward};
use crate::matrix::Matrix;

/// Which expectation the attention layer trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Unconstrained monotonic multihead attention.
    Mma,
    /// Mutually-constrained heads (`δ̂`).
    McmmaDelta,
    /// Self-constrained heads (`γ̂`).
    McmmaGamma,
}

impl TrainMode {
    pub fn attention(self, epsilon: usize) -> AttentionMode {
        match self {
            TrainMode::Mma => AttentionMode::Unconstrained,
            TrainMode::McmmaDelta => AttentionMode::MutuallyConstrained { epsilon },
            TrainMode::McmmaGamma => AttentionMode::SelfConstrained { epsilon },
        }
    }

    pub fn alignment_kind(self) -> AlignmentKind {
        match self {
            TrainMode::Mma => AlignmentKind::UnconstrainedAlpha,
            TrainMode::McmmaDelta => AlignmentKind::MutuallyConstrainedDelta,
            TrainMode::McmmaGamma => AlignmentKind::SelfConstrainedGamma,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Mma => "mma",
            TrainMode::McmmaDelta => "mcmma_delta",
            TrainMode::McmmaGamma => "mcmma_gamma",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "mma" => Some(TrainMode::Mma),
            "mcmma_delta" | "mcmma" | "delta" => Some(TrainMode::McmmaDelta),
            "mcmma_gamma" | "gamma" => Some(TrainMode::McmmaGamma),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub num_frames: usize,
    pub num_steps: usize,
    pub input_dim: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub chunk_width: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2
            || self.num_frames < 1
            || self.num_steps < 1
            || self.input_dim < 1
            || self.model_dim < 1
            || self.num_heads < 1
            || self.chunk_width < 1
        {
            return Err(invalid(format!("degenerate model config {self:?}")));
        }
        Ok(())
    }

    /// Index of the begin-of-sequence row of the decoder embedding.
    pub fn bos(&self) -> usize {
        self.vocab_size
    }

    fn energy_scale(&self) -> f64 {
        1.0 / (self.model_dim as f64).sqrt()
    }
}

/// All trainable parameters. The same type doubles as a gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelParams {
    pub config: ModelConfig,
    /// `d × input_dim`
    pub enc_w: Matrix,
    /// `1 × d`
    pub enc_b: Matrix,
    /// `T × d`
    pub enc_pos: Matrix,
    /// `(V + 1) × d`; the last row embeds the begin-of-sequence symbol.
    pub dec_emb: Matrix,
    /// `L × d`
    pub dec_pos: Matrix,
    pub mono_q: Vec<Matrix>,
    pub mono_k: Vec<Matrix>,
    /// `1 × M` monotonic energy offsets.
    pub mono_bias: Matrix,
    pub chunk_q: Vec<Matrix>,
    pub chunk_k: Vec<Matrix>,
    /// `V × d`
    pub out_ctx: Matrix,
    /// `V × d`
    pub out_state: Matrix,
    /// `1 × V`
    pub out_b: Matrix,
}

impl ToyModelParams {
    /// Gaussian initialisation with standard deviation `1/√fan_in`; the
    /// monotonic energy offsets start at `init_bias`.
    pub fn init(config: ModelConfig, seed: u64, init_bias: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, m) = (config.model_dim, config.num_heads);
        let mut gauss = |rows: usize, cols: usize, fan_in: usize| {
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("valid std");
            Matrix::from_fn(rows, cols, |_, _| normal.sample(&mut rng))
        };
        let enc_w = gauss(d, config.input_dim, config.input_dim);
        let enc_pos = gauss(config.num_frames, d, d);
        let dec_emb = gauss(config.vocab_size + 1, d, d);
        let dec_pos = gauss(config.num_steps, d, d);
        let mono_q = (0..m).map(|_| gauss(d, d, d)).collect();
        let mono_k = (0..m).map(|_| gauss(d, d, d)).collect();
        let chunk_q = (0..m).map(|_| gauss(d, d, d)).collect();
        let chunk_k = (0..m).map(|_| gauss(d, d, d)).collect();
        let out_ctx = gauss(config.vocab_size, d, d);
        let out_state = gauss(config.vocab_size, d, d);
        Ok(Self {
            config,
            enc_w,
            enc_b: Matrix::zeros(1, d),
            enc_pos,
            dec_emb,
            dec_pos,
            mono_q,
            mono_k,
            mono_bias: Matrix::filled(1, m, init_bias),
            chunk_q,
            chunk_k,
            out_ctx,
            out_state,
            out_b: Matrix::zeros(1, config.vocab_size),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, b) in z.blocks_mut() {
            b.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Named parameter blocks in a fixed order.
    pub fn blocks(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![
            ("enc_w".to_string(), &self.enc_w),
            ("enc_b".to_string(), &self.enc_b),
            ("enc_pos".to_string(), &self.enc_pos),
            ("dec_emb".to_string(), &self.dec_emb),
            ("dec_pos".to_string(), &self.dec_pos),
        ];
        for (i, m) in self.mono_q.iter().enumerate() {
            out.push((format!("mono_q.{i}"), m));
        }
        for (i, m) in self.mono_k.iter().enumerate() {
            out.push((format!("mono_k.{i}"), m));
        }
        out.push(("mono_bias".to_string(), &self.mono_bias));
        for (i, m) in self.chunk_q.iter().enumerate() {
            out.push((format!("chunk_q.{i}"), m));
        }
        for (i, m) in self.chunk_k.iter().enumerate() {
            out.push((format!("chunk_k.{i}"), m));
        }
        out.push(("out_ctx".to_string(), &self.out_ctx));
        out.push(("out_state".to_string(), &self.out_state));
        out.push(("out_b".to_string(), &self.out_b));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = vec![
            ("enc_w".to_string(), &mut self.enc_w),
            ("enc_b".to_string(), &mut self.enc_b),
            ("enc_pos".to_string(), &mut self.enc_pos),
            ("dec_emb".to_string(), &mut self.dec_emb),
            ("dec_pos".to_string(), &mut self.dec_pos),
        ];
        for (i, m) in self.mono_q.iter_mut().enumerate() {
            out.push((format!("mono_q.{i}"), m));
        }
        for (i, m) in self.mono_k.iter_mut().enumerate() {
            out.push((format!("mono_k.{i}"), m));
        }
        out.push(("mono_bias".to_string(), &mut self.mono_bias));
        for (i, m) in self.chunk_q.iter_mut().enumerate() {
            out.push((format!("chunk_q.{i}"), m));
        }
        for (i, m) in self.chunk_k.iter_mut().enumerate() {
            out.push((format!("chunk_k.{i}"), m));
        }
        out.push(("out_ctx".to_string(), &mut self.out_ctx));
        out.push(("out_state".to_string(), &mut self.out_state));
        out.push(("out_b".to_string(), &mut self.out_b));
        out
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.as_slice().len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.as_slice().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(shape_err("flat parameter vector has the wrong length"));
        }
        let mut offset = 0;
        for (_, b) in self.blocks_mut() {
            let n = b.as_slice().len();
            b.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `self += factor · other`, block by block.
    pub fn add_scaled(&mut self, other: &ToyModelParams, factor: f64) {
        for ((_, a), (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.add_scaled(b, factor);
        }
    }

    pub fn scale_all(&mut self, factor: f64) {
        for (_, b) in self.blocks_mut() {
            b.scale(factor);
        }
    }

    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.as_slice().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.is_finite())
    }

    /// Encoder states `h`, `T × d`.
    pub fn encode(&self, frames: &Matrix) -> Result<Matrix> {
        if frames.shape() != (self.config.num_frames, self.config.input_dim) {
            return Err(shape_err(format!(
                "input frames are {:?}, model expects {:?}",
                frames.shape(),
                (self.config.num_frames, self.config.input_dim)
            )));
        }
        let mut pre = frames.matmul(&self.enc_w.transpose())?;
        for t in 0..pre.rows() {
            let pos = self.enc_pos.row(t);
            for ((v, b), p) in pre.row_mut(t).iter_mut().zip(self.enc_b.row(0)).zip(pos) {
                *v = (*v + b + p).tanh();
            }
        }
        Ok(pre)
    }

    /// Decoder state for 0-based output step `step` after token `prev`.
    pub fn decoder_state(&self, prev: usize, step: usize) -> Vec<f64> {
        self.dec_emb
            .row(prev)
            .iter()
            .zip(self.dec_pos.row(step))
            .map(|(e, p)| e + p)
            .collect()
    }

    fn decoder_states(&self, prev_tokens: &[usize]) -> Matrix {
        let d = self.config.model_dim;
        let mut s = Matrix::zeros(prev_tokens.len(), d);
        for (i, &tok) in prev_tokens.iter().enumerate() {
            s.row_mut(i).copy_from_slice(&self.decoder_state(tok, i));
        }
        s
    }

    /// Monotonic energies of head `m` for decoder states `s` (`rows × d`).
    pub(crate) fn head_energies(&self, m: usize, s: &Matrix, h: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
        let q = s.matmul(&self.mono_q[m].transpose())?;
        let k = h.matmul(&self.mono_k[m].transpose())?;
        let mut e = q.matmul(&k.transpose())?;
        e.scale(self.config.energy_scale());
        let bias = self.mono_bias[(0, m)];
        e.as_mut_slice().iter_mut().for_each(|v| *v += bias);
        Ok((e, q, k))
    }

    pub(crate) fn chunk_energies(&self, m: usize, s: &Matrix, h: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
        let q = s.matmul(&self.chunk_q[m].transpose())?;
        let k = h.matmul(&self.chunk_k[m].transpose())?;
        let mut u = q.matmul(&k.transpose())?;
        u.scale(self.config.energy_scale());
        Ok((u, q, k))
    }

    /// `W_c c + W_s s + b_out` for one step.
    pub(crate) fn output_logits(&self, context: &[f64], state: &[f64]) -> Vec<f64> {
        (0..self.config.vocab_size)
            .map(|v| {
                let c: f64 = self.out_ctx.row(v).iter().zip(context).map(|(w, x)| w * x).sum();
                let s: f64 = self.out_state.row(v).iter().zip(state).map(|(w, x)| w * x).sum();
                c + s + self.out_b[(0, v)]
            })
            .collect()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let peak = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = peak + row.iter().map(|v| (v - peak).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Teacher-forcing decoder inputs: begin-of-sequence, then `y_1..y_{L-1}`.
pub fn decoder_inputs(targets: &[usize], bos: usize) -> Vec<usize> {
    std::iter::once(bos)
        .chain(targets.iter().copied().take(targets.len().saturating_sub(1)))
        .collect()
}

/// Options of a single forward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions<'a> {
    /// Surviving heads; `None` keeps every head.
    pub mask: Option<&'a [bool]>,
    /// Pre-sigmoid noise added to each head's monotonic energies.
    pub energy_noise: Option<&'a [Matrix]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `L × V`
    pub logits: Matrix,
    /// Attention weights used by each head; `None` for dropped heads.
    pub alignments: Vec<Option<AlignmentDistribution>>,
    /// Summed cross-entropy over the output steps.
    pub loss: f64,
    /// Teacher-forced steps whose argmax equals the target.
    pub correct: usize,
}

/// Values retained for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<usize>,
    h: Matrix,
    s: Matrix,
    active: Vec<usize>,
    p: Vec<Matrix>,
    mono_qk: Vec<(Matrix, Matrix)>,
    u: Vec<Matrix>,
    chunk_qk: Vec<(Matrix, Matrix)>,
    layer: LayerForward,
    context: Matrix,
    probs: Matrix,
    mode: AttentionMode,
}

/// Teacher-forced forward pass.
pub fn toy_forward(
    params: &ToyModelParams,
    example: &Example,
    mode: TrainMode,
    epsilon: usize,
    opts: ForwardOptions<'_>,
) -> Result<ForwardOutput> {
    forward_cached(params, example, mode, epsilon, opts).map(|(o, _)| o)
}

pub fn forward_cached(
    params: &ToyModelParams,
    example: &Example,
    mode: TrainMode,
    epsilon: usize,
    opts: ForwardOptions<'_>,
) -> Result<(ForwardOutput, ForwardCache)> {
    let cfg = params.config;
    if example.targets.len() != cfg.num_steps {
        return Err(shape_err(format!(
            "{} targets, model has L = {}",
            example.targets.len(),
            cfg.num_steps
        )));
    }
    if let Some(t) = example.targets.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(invalid(format!("target token {t} outside the vocabulary")));
    }
    let active: Vec<usize> = match opts.mask {
        Some(mask) => {
            if mask.len() != cfg.num_heads {
                return Err(shape_err("head mask length differs from M"));
            }
            (0..cfg.num_heads).filter(|&m| mask[m]).collect()
        }
        None => (0..cfg.num_heads).collect(),
    };
    if active.is_empty() {
        return Err(invalid("every head is masked"));
    }
    let inputs = decoder_inputs(&example.targets, cfg.bos());
    let h = params.encode(&example.frames)?;
    let s = params.decoder_states(&inputs);

    let mut p = Vec::with_capacity(active.len());
    let mut mono_qk = Vec::with_capacity(active.len());
    let mut u = Vec::with_capacity(active.len());
    let mut chunk_qk = Vec::with_capacity(active.len());
    for &m in &active {
        let (mut e, q, k) = params.head_energies(m, &s, &h)?;
        if let Some(noise) = opts.energy_noise {
            e.add_scaled(&noise[m], 1.0);
        }
        if !e.is_finite() {
            return Err(Error::NonFinite(format!("monotonic energies of head {m}")));
        }
        p.push(Matrix::from_vec(e.rows(), e.cols(), e.as_slice().iter().map(|&x| sigmoid(x)).collect())?);
        mono_qk.push((q, k));
        let (um, cq, ck) = params.chunk_energies(m, &s, &h)?;
        if !um.is_finite() {
            return Err(Error::NonFinite(format!("chunk energies of head {m}")));
        }
        u.push(um);
        chunk_qk.push((cq, ck));
    }
    let attention = mode.attention(epsilon);
    let alpha0 = one_hot_start(cfg.num_frames);
    let layer = layer_forward(&p, &u, &h, &alpha0, attention, cfg.chunk_width)?;

    let mut context = Matrix::zeros(cfg.num_steps, cfg.model_dim);
    let share = 1.0 / active.len() as f64;
    for c in &layer.contexts {
        context.add_scaled(c, share);
    }
    let mut logits = Matrix::zeros(cfg.num_steps, cfg.vocab_size);
    let mut probs = Matrix::zeros(cfg.num_steps, cfg.vocab_size);
    let mut loss = 0.0;
    let mut correct = 0;
    for i in 0..cfg.num_steps {
        let row = params.output_logits(context.row(i), s.row(i));
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logits at step {}", i + 1)));
        }
        let lsm = log_softmax(&row);
        let target = example.targets[i];
        loss -= lsm[target];
        if argmax(&row) == target {
            correct += 1;
        }
        logits.row_mut(i).copy_from_slice(&row);
        for (pv, l) in probs.row_mut(i).iter_mut().zip(&lsm) {
            *pv = l.exp();
        }
    }

    let mut alignments = vec![None; cfg.num_heads];
    for (slot, &m) in active.iter().enumerate() {
        alignments[m] = Some(AlignmentDistribution::from_raw(
            layer.weights[slot].clone(),
            mode.alignment_kind(),
        ));
    }
    let out = ForwardOutput {
        logits,
        alignments,
        loss,
        correct,
    };
    let cache = ForwardCache {
        inputs,
        h,
        s,
        active,
        p,
        mono_qk,
        u,
        chunk_qk,
        layer,
        context,
        probs,
        mode: attention,
    };
    Ok((out, cache))
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Gradient of the summed cross-entropy of [`forward_cached`] with respect
/// to every parameter, accumulated into `grads`.
pub fn backward(
    params: &ToyModelParams,
    example: &Example,
    cache: &ForwardCache,
    grads: &mut ToyModelParams,
) -> Result<()> {
    let cfg = params.config;
    let scale = cfg.energy_scale();

    let mut d_logits = cache.probs.clone();
    for (i, &t) in example.targets.iter().enumerate() {
        d_logits[(i, t)] -= 1.0;
    }
    for i in 0..cfg.num_steps {
        for (b, g) in grads.out_b.row_mut(0).iter_mut().zip(d_logits.row(i)) {
            *b += g;
        }
    }
    let d_lt = d_logits.transpose();
    grads.out_ctx.add_scaled(&d_lt.matmul(&cache.context)?, 1.0);
    grads.out_state.add_scaled(&d_lt.matmul(&cache.s)?, 1.0);
    let mut d_context = d_logits.matmul(&params.out_ctx)?;
    let mut d_s = d_logits.matmul(&params.out_state)?;

    d_context.scale(1.0 / cache.active.len() as f64);
    let d_contexts = vec![d_context; cache.active.len()];
    let alpha0 = one_hot_start(cfg.num_frames);
    let bundle = layer_backward(
        &cache.p,
        &cache.u,
        &cache.h,
        &alpha0,
        cache.mode,
        cfg.chunk_width,
        &cache.layer,
        &d_contexts,
    )?;
    let mut d_h = bundle.d_h;

    for (slot, &m) in cache.active.iter().enumerate() {
        let p = &cache.p[slot];
        let d_e = Matrix::from_fn(p.rows(), p.cols(), |i, j| {
            let pv = p[(i, j)];
            bundle.d_p[slot][(i, j)] * pv * (1.0 - pv)
        });
        grads.mono_bias[(0, m)] += d_e.sum();
        let (q, k) = &cache.mono_qk[slot];
        project_backward(
            &d_e,
            q,
            k,
            scale,
            &cache.s,
            &cache.h,
            (&params.mono_q[m], &params.mono_k[m]),
            (&mut grads.mono_q[m], &mut grads.mono_k[m]),
            &mut d_s,
            &mut d_h,
        )?;
        let (cq, ck) = &cache.chunk_qk[slot];
        project_backward(
            &bundle.d_u[slot],
            cq,
            ck,
            scale,
            &cache.s,
            &cache.h,
            (&params.chunk_q[m], &params.chunk_k[m]),
            (&mut grads.chunk_q[m], &mut grads.chunk_k[m]),
            &mut d_s,
            &mut d_h,
        )?;
    }

    let mut d_pre = d_h;
    for t in 0..d_pre.rows() {
        for (g, hv) in d_pre.row_mut(t).iter_mut().zip(cache.h.row(t)) {
            *g *= 1.0 - hv * hv;
        }
    }
    grads.enc_w.add_scaled(&d_pre.transpose().matmul(&example.frames)?, 1.0);
    for t in 0..d_pre.rows() {
        for (b, g) in grads.enc_b.row_mut(0).iter_mut().zip(d_pre.row(t)) {
            *b += g;
        }
    }
    grads.enc_pos.add_scaled(&d_pre, 1.0);

    for (i, &tok) in cache.inputs.iter().enumerate() {
        for (e, g) in grads.dec_emb.row_mut(tok).iter_mut().zip(d_s.row(i)) {
            *e += g;
        }
        for (e, g) in grads.dec_pos.row_mut(i).iter_mut().zip(d_s.row(i)) {
            *e += g;
        }
    }
    Ok(())
}

/// Backward through `E = scale · (S W_qᵀ)(H W_kᵀ)ᵀ`.
#[allow(clippy::too_many_arguments)]
fn project_backward(
    d_e: &Matrix,
    q: &Matrix,
    k: &Matrix,
    scale: f64,
    s: &Matrix,
    h: &Matrix,
    weights: (&Matrix, &Matrix),
    grads: (&mut Matrix, &mut Matrix),
    d_s: &mut Matrix,
    d_h: &mut Matrix,
) -> Result<()> {
    let mut d_q = d_e.matmul(k)?;
    d_q.scale(scale);
    let mut d_k = d_e.transpose().matmul(q)?;
    d_k.scale(scale);
    grads.0.add_scaled(&d_q.transpose().matmul(s)?, 1.0);
    d_s.add_scaled(&d_q.matmul(weights.0)?, 1.0);
    grads.1.add_scaled(&d_k.transpose().matmul(h)?, 1.0);
    d_h.add_scaled(&d_k.matmul(weights.1)?, 1.0);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::task::{gen_synthetic, SyntheticTask};

    fn tiny() -> (ToyModelParams, Example) {
        let task = SyntheticTask {
            vocab_size: 5,
            num_frames: 8,
            num_steps: 2,
            upsample: 4,
            input_dim: 4,
            num_examples: 1,
            ..SyntheticTask::default()
        };
        let data = gen_synthetic(&task).unwrap();
        let cfg = ModelConfig {
            vocab_size: 5,
            num_frames: 8,
            num_steps: 2,
            input_dim: 4,
            model_dim: 4,
            num_heads: 2,
            chunk_width: 2,
        };
        (ToyModelParams::init(cfg, 3, -0.5).unwrap(), data.examples[0].clone())
    }

    #[test]
    fn mma_alignments_are_alpha() {
        let (params, ex) = tiny();
        let out = toy_forward(&params, &ex, TrainMode::Mma, 2, ForwardOptions::default()).unwrap();
        for a in out.alignments.iter().flatten() {
            assert_eq!(a.kind(), AlignmentKind::UnconstrainedAlpha);
            assert!(a.max_row_sum_error() < 1e-12);
        }
    }

    #[test]
    fn deterministic_forward() {
        let (params, ex) = tiny();
        let a = toy_forward(&params, &ex, TrainMode::McmmaDelta, 1, ForwardOptions::default()).unwrap();
        let b = toy_forward(&params, &ex, TrainMode::McmmaDelta, 1, ForwardOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_mask_matches_no_mask() {
        let (params, ex) = tiny();
        let a = toy_forward(&params, &ex, TrainMode::McmmaDelta, 1, ForwardOptions::default()).unwrap();
        let mask = [true, true];
        let b = toy_forward(
            &params,
            &ex,
            TrainMode::McmmaDelta,
            1,
            ForwardOptions {
                mask: Some(&mask),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flat_round_trip() {
        let (mut params, _) = tiny();
        let flat = params.to_flat();
        assert_eq!(flat.len(), params.num_params());
        let before = params.clone();
        params.set_flat(&flat).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn decoder_inputs_shift_targets() {
        assert_eq!(decoder_inputs(&[3, 1, 4], 9), vec![9, 3, 1]);
    }
}
