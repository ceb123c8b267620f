//! Brute-force reference implementations.
//!
//! Nothing here shares code with [`crate::align`]: the enumeration walks
//! every hard selection path, the direct-sum expansion recomputes every
//! partial sum and product with fresh loops, and the Monte Carlo driver
//! samples hard decisions for the decoder's state machine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::{AlignmentDistribution, AlignmentKind, ConstraintConfig, ConstraintMode};
use crate::decode::{decode_sequence, DecodePolicy, MatrixModel, Termination};
use crate::error::{invalid, shape_err, Error, Result};
use crate::matrix::Matrix;

pub const MAX_ENUM_FRAMES: usize = 10;
pub const MAX_ENUM_STEPS: usize = 5;
pub const MAX_DIRECT_SUM_FRAMES: usize = 12;

/// A hard selection history: boundary per output step, `None` once the
/// head has run off the end of the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonotonicPath {
    boundaries: Vec<Option<usize>>,
}

impl MonotonicPath {
    pub fn new(boundaries: Vec<Option<usize>>, num_frames: usize) -> Result<Self> {
        let mut last = 0;
        let mut ended = false;
        for b in &boundaries {
            match (b, ended) {
                (Some(_), true) => return Err(invalid("selection after a no-selection step")),
                (Some(t), false) => {
                    if *t < last || *t < 1 || *t > num_frames {
                        return Err(invalid(format!("boundary {t} breaks monotonicity")));
                    }
                    last = *t;
                }
                (None, _) => ended = true,
            }
        }
        Ok(Self { boundaries })
    }

    pub fn boundaries(&self) -> &[Option<usize>] {
        &self.boundaries
    }
}

/// Every monotonic path with its probability. The start frame is drawn
/// from `alpha0` (1-based frame `k` with weight `alpha0[k-1]`); missing
/// initial mass becomes a path that never selects.
pub fn enumerate_paths(p: &Matrix, alpha0: &[f64]) -> Result<Vec<(MonotonicPath, f64)>> {
    let (steps, frames) = p.shape();
    if frames > MAX_ENUM_FRAMES || steps > MAX_ENUM_STEPS {
        return Err(Error::TooLarge(format!(
            "T = {frames}, L = {steps} (limits {MAX_ENUM_FRAMES}, {MAX_ENUM_STEPS})"
        )));
    }
    if steps == 0 || frames == 0 || alpha0.len() != frames {
        return Err(shape_err("enumeration needs L, T >= 1 and |alpha0| = T"));
    }
    let mut paths = Vec::new();
    let mut buf = Vec::with_capacity(steps);
    for (k, &w) in alpha0.iter().enumerate() {
        if w > 0.0 {
            extend(p, 0, Some(k + 1), w, &mut buf, &mut paths);
        }
    }
    let missing = 1.0 - alpha0.iter().sum::<f64>();
    if missing > 0.0 {
        extend(p, 0, None, missing, &mut buf, &mut paths);
    }
    Ok(paths)
}

fn extend(
    p: &Matrix,
    step: usize,
    from: Option<usize>,
    weight: f64,
    buf: &mut Vec<Option<usize>>,
    out: &mut Vec<(MonotonicPath, f64)>,
) {
    let (steps, frames) = p.shape();
    if step == steps {
        out.push((
            MonotonicPath {
                boundaries: buf.clone(),
            },
            weight,
        ));
        return;
    }
    let Some(start) = from else {
        buf.push(None);
        extend(p, step + 1, None, weight, buf, out);
        buf.pop();
        return;
    };
    // Skip frames start..t-1, then select t.
    let mut skip = 1.0;
    for t in start..=frames {
        let select = skip * p[(step, t - 1)];
        buf.push(Some(t));
        extend(p, step + 1, Some(t), weight * select, buf, out);
        buf.pop();
        skip *= 1.0 - p[(step, t - 1)];
    }
    buf.push(None);
    extend(p, step + 1, None, weight * skip, buf, out);
    buf.pop();
}

/// Expected alignment obtained by marginalising the path enumeration.
pub fn alpha_by_enumeration(p: &Matrix, alpha0: &[f64]) -> Result<AlignmentDistribution> {
    let paths = enumerate_paths(p, alpha0)?;
    let (steps, frames) = p.shape();
    let mut out = Matrix::zeros(steps, frames + 1);
    for (path, prob) in &paths {
        for (i, b) in path.boundaries.iter().enumerate() {
            let col = b.map_or(frames, |t| t - 1);
            out[(i, col)] += prob;
        }
    }
    AlignmentDistribution::new(out, AlignmentKind::UnconstrainedAlpha)
}

/// Constrained expectations expanded literally, one scalar at a time.
pub fn constrained_by_direct_sum(
    alphas: &[AlignmentDistribution],
    cfg: &ConstraintConfig,
) -> Result<Vec<AlignmentDistribution>> {
    let first = alphas.first().ok_or_else(|| invalid("no heads"))?;
    let (steps, cols) = first.values().shape();
    let frames = cols - 1;
    if frames > MAX_DIRECT_SUM_FRAMES {
        return Err(Error::TooLarge(format!("T = {frames} > {MAX_DIRECT_SUM_FRAMES}")));
    }
    if alphas.iter().any(|a| a.values().shape() != (steps, cols)) {
        return Err(shape_err("heads differ in shape"));
    }
    let eps = cfg.epsilon as i64;
    let t = frames as i64;

    // α^m[i][x] with 1-based i and x; zero outside 1..=T and at i = 0.
    let a = |m: usize, i: usize, x: i64| -> f64 {
        if i == 0 || x < 1 || x > t {
            0.0
        } else {
            alphas[m].values()[(i - 1, (x - 1) as usize)]
        }
    };
    // B^m_i(x) = 1 - Σ_{k=1}^{x} α^m[i][k]; 1 at step 0 or x ≤ 0.
    let b = |m: usize, i: usize, x: i64| -> f64 {
        if i == 0 || x <= 0 {
            return 1.0;
        }
        let mut total = 0.0;
        for k in 1..=x {
            total += a(m, i, k);
        }
        let r = 1.0 - total;
        if r < 0.0 && r > -1e-12 {
            0.0
        } else {
            r
        }
    };

    let mut results = Vec::with_capacity(alphas.len());
    for m in 0..alphas.len() {
        let q = |i: usize, x: i64| -> f64 {
            if x <= 0 {
                return 1.0;
            }
            let mut prod = 1.0;
            for other in 0..alphas.len() {
                if other != m {
                    prod *= b(other, i, x);
                }
            }
            prod
        };
        let mut out = Matrix::zeros(steps, cols);
        for i in 1..=steps {
            for j in 1..=t {
                let v = if j <= eps {
                    a(m, i, j)
                } else {
                    match cfg.mode {
                        ConstraintMode::SelfConstrained => {
                            a(m, i, j) * b(m, i - 1, j - eps) + b(m, i, j - 1) * a(m, i - 1, j - eps)
                        }
                        ConstraintMode::MutuallyConstrained => {
                            a(m, i, j) * q(i, j - eps)
                                + b(m, i, j - 1) * (q(i, j - eps - 1) - q(i, j - eps))
                        }
                    }
                };
                out[(i - 1, (j - 1) as usize)] = v;
            }
            out[(i - 1, frames)] = match cfg.mode {
                ConstraintMode::SelfConstrained => b(m, i, t) * b(m, i - 1, t - eps),
                ConstraintMode::MutuallyConstrained => b(m, i, t) * q(i, t - eps),
            };
        }
        let kind = match cfg.mode {
            ConstraintMode::SelfConstrained => AlignmentKind::SelfConstrainedGamma,
            ConstraintMode::MutuallyConstrained => AlignmentKind::MutuallyConstrainedDelta,
        };
        results.push(AlignmentDistribution::new(out, kind)?);
    }
    Ok(results)
}

/// Aggregate statistics of hard head-synchronous decodes on sampled
/// Bernoulli decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub samples: usize,
    /// Mean boundary, `L × M` (steps × heads), over samples that reached
    /// the step.
    pub mean_boundary: Matrix,
    /// `histogram[s]` counts samples whose largest per-step spread is `s`.
    pub spread_histogram: Vec<u64>,
    pub spread_violations: u64,
    pub monotonicity_violations: u64,
    /// Largest gap between the empirical boundary frequencies and the
    /// mutually-constrained expectation of the same probabilities. Reported
    /// for reference only; the expectation is not the law of this process.
    pub divergence_from_delta: f64,
}

/// Samples `n_samples` hard decision tensors `z ~ Bernoulli(p)` and decodes
/// each with the head-synchronous state machine under `policy`.
///
/// Sample `s` draws from a ChaCha8 stream `s` seeded with `seed`, so the
/// report is independent of evaluation order.
pub fn monte_carlo_hsd(
    p: &[Matrix],
    policy: &DecodePolicy,
    n_samples: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    if n_samples < 1 {
        return Err(invalid("at least one sample is required"));
    }
    policy.validate()?;
    MatrixModel::new(p.to_vec())?;
    let heads = p.len();
    let (steps, frames) = p[0].shape();
    let mut sums = Matrix::zeros(steps, heads);
    let mut counts = vec![0u64; steps];
    let mut freq = vec![Matrix::zeros(steps, frames + 1); heads];
    let mut histogram = vec![0u64; frames + 1];
    let mut spread_violations = 0;
    let mut monotonicity_violations = 0;
    let mut hard = vec![Matrix::zeros(steps, frames); heads];

    for s in 0..n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        for (z, pm) in hard.iter_mut().zip(p) {
            for (zv, &pv) in z.as_mut_slice().iter_mut().zip(pm.as_slice()) {
                *zv = if rng.random::<f64>() < pv { 1.0 } else { 0.0 };
            }
        }
        let mut sampled = MatrixModel::new(hard.clone())?;
        let trace = decode_sequence(&mut sampled, policy, steps)?;
        let (bad_spread, bad_mono) = trace.violations(policy.epsilon);
        spread_violations += bad_spread as u64;
        monotonicity_violations += bad_mono as u64;
        let max_spread = trace.steps.iter().map(|st| st.spread()).max().unwrap_or(0);
        histogram[max_spread.min(frames)] += 1;
        for st in &trace.steps {
            let i = st.step - 1;
            counts[i] += 1;
            // Every head forced means none activated: the input ran out.
            let exhausted = st.heads.iter().all(|h| h.forced);
            for (m, h) in st.heads.iter().enumerate() {
                sums[(i, m)] += h.boundary as f64;
                let col = if exhausted { frames } else { h.boundary - 1 };
                freq[m][(i, col)] += 1.0;
            }
        }
        if trace.termination == Termination::InputExhausted {
            let reached = trace.steps.len();
            for i in reached..steps {
                for f in freq.iter_mut() {
                    f[(i, frames)] += 1.0;
                }
            }
        }
    }
    for i in 0..steps {
        for m in 0..heads {
            if counts[i] > 0 {
                sums[(i, m)] /= counts[i] as f64;
            }
        }
    }
    let divergence = delta_divergence(p, policy.epsilon, &freq, n_samples)?;
    Ok(MonteCarloReport {
        samples: n_samples,
        mean_boundary: sums,
        spread_histogram: histogram,
        spread_violations,
        monotonicity_violations,
        divergence_from_delta: divergence,
    })
}

fn delta_divergence(p: &[Matrix], epsilon: usize, freq: &[Matrix], n: usize) -> Result<f64> {
    use crate::align::{expected_alignment, mutually_constrained, one_hot_start, SelectionProbabilities};
    let frames = p[0].cols();
    let alphas = p
        .iter()
        .enumerate()
        .map(|(m, pm)| {
            expected_alignment(&SelectionProbabilities::new(pm.clone(), m)?, &one_hot_start(frames))
        })
        .collect::<Result<Vec<_>>>()?;
    let deltas = mutually_constrained(&alphas, &ConstraintConfig::mutual(epsilon, p.len()))?;
    let mut worst: f64 = 0.0;
    for (d, f) in deltas.iter().zip(freq) {
        for (dv, fv) in d.values().as_slice().iter().zip(f.as_slice()) {
            worst = worst.max((dv - fv / n as f64).abs());
        }
    }
    Ok(worst)
}
