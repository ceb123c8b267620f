use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::eval::ToyDecoder;
use super::headdrop::headdrop_mask;
use super::model::{backward, forward_cached, ForwardOptions, ModelConfig, ToyModelParams, TrainMode};
use super::task::{gen_synthetic, Dataset, Example, SyntheticTask};
use crate::decode::{decode_sequence, DecodePolicy};
use crate::error::{invalid, Error, Result};
use crate::fmt_f64;
use crate::matrix::Matrix;

/// Training hyper-parameters. The learning rate is constant for
/// `decay_start` epochs and then multiplied by `decay_rate` every epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epsilon_train: usize,
    pub headdrop_prob: f64,
    pub learning_rate: f64,
    pub decay_start: usize,
    pub decay_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub model_dim: usize,
    pub num_heads: usize,
    pub chunk_width: usize,
    /// Initial offset of every monotonic energy.
    pub init_bias: f64,
    /// Rescale batch gradients whose norm exceeds this; `0` disables.
    pub clip_norm: f64,
    /// Std of Gaussian noise added to monotonic energies; `0` disables.
    pub energy_noise_std: f64,
    /// Size of the held-out split used for accuracy and spread.
    pub validation_examples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::McmmaDelta,
            epsilon_train: 4,
            headdrop_prob: 0.1,
            learning_rate: 0.5,
            decay_start: 100,
            decay_rate: 0.98,
            epochs: 200,
            batch_size: 8,
            seed: 0,
            model_dim: 16,
            num_heads: 2,
            chunk_width: 4,
            init_bias: -1.0,
            clip_norm: 5.0,
            energy_noise_std: 0.0,
            validation_examples: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode != TrainMode::Mma && self.epsilon_train < 1 {
            return Err(invalid("constrained modes need epsilon_train >= 1"));
        }
        if !(0.0..1.0).contains(&self.headdrop_prob) {
            return Err(invalid("headdrop_prob must lie in [0, 1)"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid("learning_rate must be finite and non-negative"));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(invalid("decay_rate must lie in (0, 1]"));
        }
        if self.batch_size < 1 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if !(self.clip_norm >= 0.0) || !(self.energy_noise_std >= 0.0) {
            return Err(invalid("clip_norm and energy_noise_std must be non-negative"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decayed = epoch.saturating_sub(self.decay_start);
        self.learning_rate * self.decay_rate.powi(decayed as i32)
    }

    pub fn model_config(&self, task: &SyntheticTask) -> ModelConfig {
        ModelConfig {
            vocab_size: task.vocab_size,
            num_frames: task.num_frames,
            num_steps: task.num_steps,
            input_dim: task.input_dim,
            model_dim: self.model_dim,
            num_heads: self.num_heads,
            chunk_width: self.chunk_width,
        }
    }

    /// Decode policy used to measure spread during training.
    pub fn spread_policy(&self) -> DecodePolicy {
        match self.mode {
            TrainMode::Mma => DecodePolicy::unsynchronized(),
            _ => DecodePolicy::with_epsilon(self.epsilon_train),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-token cross-entropy over the epoch's updates.
    pub loss: f64,
    /// Teacher-forced token accuracy on the held-out split.
    pub accuracy: f64,
    /// Mean boundary spread of head-synchronous decodes of the held-out split.
    pub spread: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best held-out accuracy.
    pub best: Checkpoint,
    pub last: ToyModelParams,
    pub log: Vec<EpochLog>,
}

const HEADDROP_SALT: u64 = 0x4ead_d409;
const NOISE_SALT: u64 = 0x0e4e_2617;

/// Gradient of the summed cross-entropy over `batch`; returns the summed
/// loss and the gradient buffer.
pub fn batch_gradient(
    params: &ToyModelParams,
    batch: &[&Example],
    cfg: &TrainConfig,
    sample_counter: u64,
) -> Result<(f64, ToyModelParams)> {
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let c = params.config;
    for (k, ex) in batch.iter().enumerate() {
        let counter = sample_counter + k as u64;
        let mask = if cfg.headdrop_prob > 0.0 {
            Some(headdrop_mask(c.num_heads, cfg.headdrop_prob, cfg.seed ^ HEADDROP_SALT, counter)?)
        } else {
            None
        };
        let noise = if cfg.energy_noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ NOISE_SALT);
            rng.set_stream(counter);
            let normal = Normal::new(0.0, cfg.energy_noise_std).map_err(|e| invalid(e.to_string()))?;
            Some(
                (0..c.num_heads)
                    .map(|_| Matrix::from_fn(c.num_steps, c.num_frames, |_, _| normal.sample(&mut rng)))
                    .collect::<Vec<_>>(),
            )
        } else {
            None
        };
        let opts = ForwardOptions {
            mask: mask.as_deref(),
            energy_noise: noise.as_deref(),
        };
        let (out, cache) = forward_cached(params, ex, cfg.mode, cfg.epsilon_train, opts)?;
        loss += out.loss;
        backward(params, ex, &cache, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Fraction of teacher-forced steps whose argmax token is correct.
pub fn teacher_forced_accuracy(params: &ToyModelParams, data: &[Example], cfg: &TrainConfig) -> Result<f64> {
    let mut correct = 0;
    let mut total = 0;
    for ex in data {
        let (out, _) = forward_cached(params, ex, cfg.mode, cfg.epsilon_train, ForwardOptions::default())?;
        correct += out.correct;
        total += ex.targets.len();
    }
    Ok(correct as f64 / total.max(1) as f64)
}

fn mean_spread(params: &ToyModelParams, data: &[Example], policy: &DecodePolicy) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for ex in data {
        let mut model = ToyDecoder::new(params, &ex.frames)?;
        let trace = decode_sequence(&mut model, policy, params.config.num_steps)?;
        for step in &trace.steps {
            sum += step.spread() as f64;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Mini-batch gradient descent on teacher-forced cross-entropy.
///
/// Held-out data is generated from `task` with seed `task.seed + 1`.
pub fn train(cfg: &TrainConfig, task: &SyntheticTask) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = gen_synthetic(task)?;
    let held_out = gen_synthetic(&SyntheticTask {
        num_examples: cfg.validation_examples,
        ..task.reseeded(task.seed.wrapping_add(1))
    })?;
    train_on(cfg, &data, &held_out)
}

fn train_on(cfg: &TrainConfig, data: &Dataset, held_out: &Dataset) -> Result<TrainOutcome> {
    let model_cfg = cfg.model_config(&data.task);
    let mut params = ToyModelParams::init(model_cfg, cfg.seed, cfg.init_bias)?;
    let mut order: Vec<usize> = (0..data.examples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let policy = cfg.spread_policy();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<Checkpoint> = None;
    let mut counter = 0u64;
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let lr = cfg.learning_rate_at(epoch);
        let mut epoch_loss = 0.0;
        let mut tokens = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data.examples[i]).collect();
            let (loss, mut grads) = batch_gradient(&params, &batch, cfg, counter)
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged { epoch, step, loss: f64::NAN },
                    other => other,
                })?;
            counter += batch.len() as u64;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            let n_tok = batch.iter().map(|e| e.targets.len()).sum::<usize>();
            epoch_loss += loss;
            tokens += n_tok;
            grads.scale_all(1.0 / n_tok as f64);
            if cfg.clip_norm > 0.0 {
                let norm = grads.norm();
                if norm > cfg.clip_norm {
                    grads.scale_all(cfg.clip_norm / norm);
                }
            }
            if lr != 0.0 {
                params.add_scaled(&grads, -lr);
            }
            if !params.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
        }
        let accuracy = teacher_forced_accuracy(&params, &held_out.examples, cfg)?;
        let spread = mean_spread(&params, &held_out.examples, &policy)?;
        log.push(EpochLog {
            epoch,
            loss: epoch_loss / tokens.max(1) as f64,
            accuracy,
            spread,
        });
        if best.as_ref().is_none_or(|b| accuracy > b.accuracy) {
            best = Some(Checkpoint {
                task: data.task,
                train: *cfg,
                params: params.clone(),
                epoch,
                accuracy,
            });
        }
    }
    let best = match best {
        Some(b) => b,
        None => Checkpoint {
            task: data.task,
            train: *cfg,
            accuracy: teacher_forced_accuracy(&params, &held_out.examples, cfg)?,
            params: params.clone(),
            epoch: 0,
        },
    };
    Ok(TrainOutcome { best, last: params, log })
}

/// The per-epoch log as CSV.
pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,loss,accuracy,spread\n");
    for row in log {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch,
            fmt_f64(row.loss),
            fmt_f64(row.accuracy),
            fmt_f64(row.spread)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (TrainConfig, SyntheticTask) {
        let task = SyntheticTask {
            vocab_size: 4,
            num_frames: 8,
            num_steps: 4,
            upsample: 2,
            input_dim: 4,
            num_examples: 6,
            ..SyntheticTask::default()
        };
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            model_dim: 4,
            chunk_width: 2,
            epsilon_train: 2,
            headdrop_prob: 0.3,
            validation_examples: 3,
            ..TrainConfig::default()
        };
        (cfg, task)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (cfg, task) = small();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..cfg
        };
        let out = train(&cfg, &task).unwrap();
        let init = ToyModelParams::init(cfg.model_config(&task), cfg.seed, cfg.init_bias).unwrap();
        assert_eq!(out.last, init);
    }

    #[test]
    fn repeated_runs_agree() {
        let (cfg, task) = small();
        let a = train(&cfg, &task).unwrap();
        let b = train(&cfg, &task).unwrap();
        assert_eq!(log_csv(&a.log), log_csv(&b.log));
        assert_eq!(a.last, b.last);
    }

    #[test]
    fn zero_headdrop_matches_no_mask_path() {
        let (cfg, task) = small();
        let cfg = TrainConfig {
            headdrop_prob: 0.0,
            ..cfg
        };
        let data = gen_synthetic(&task).unwrap();
        let params = ToyModelParams::init(cfg.model_config(&task), 1, -1.0).unwrap();
        let batch: Vec<&Example> = data.examples.iter().collect();
        let (loss, grads) = batch_gradient(&params, &batch, &cfg, 0).unwrap();
        let mut plain = params.zeros_like();
        let mut plain_loss = 0.0;
        for ex in &batch {
            let (out, cache) =
                forward_cached(&params, ex, cfg.mode, cfg.epsilon_train, ForwardOptions::default()).unwrap();
            plain_loss += out.loss;
            backward(&params, ex, &cache, &mut plain).unwrap();
        }
        assert_eq!(loss.to_bits(), plain_loss.to_bits());
        assert_eq!(grads, plain);
    }

    #[test]
    fn divergence_is_reported() {
        let (cfg, task) = small();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            clip_norm: 0.0,
            ..cfg
        };
        match train(&cfg, &task) {
            Err(Error::Diverged { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
