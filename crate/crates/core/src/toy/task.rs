use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::matrix::Matrix;

/// A synthetic monotonic transduction task: every target token is
/// stretched over `upsample` consecutive input frames, each a noisy copy of
/// the token's embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTask {
    pub vocab_size: usize,
    /// Input length `T`; must equal `num_steps · upsample`.
    pub num_frames: usize,
    /// Output length `L`.
    pub num_steps: usize,
    pub upsample: usize,
    pub input_dim: usize,
    pub noise_std: f64,
    pub num_examples: usize,
    pub seed: u64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            vocab_size: 10,
            num_frames: 32,
            num_steps: 8,
            upsample: 4,
            input_dim: 16,
            noise_std: 0.1,
            num_examples: 128,
            seed: 0,
        }
    }
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.num_steps < 1 || self.upsample < 1 || self.input_dim < 1 {
            return Err(invalid("task needs V >= 2, L >= 1, r >= 1 and input_dim >= 1"));
        }
        if !self.num_frames.is_multiple_of(self.upsample) {
            return Err(invalid(format!(
                "T = {} is not divisible by r = {}",
                self.num_frames, self.upsample
            )));
        }
        if self.num_frames != self.num_steps * self.upsample {
            return Err(invalid(format!(
                "T = {} differs from L·r = {}",
                self.num_frames,
                self.num_steps * self.upsample
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(invalid("noise_std must be non-negative"));
        }
        Ok(())
    }

    /// The same task with a different seed, e.g. for a held-out split.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }
}

/// One utterance of the synthetic task.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// `T × input_dim` input frames.
    pub frames: Matrix,
    pub targets: Vec<usize>,
    /// Gold boundary of output `i` (1-based): the last frame of its span, `i·r`.
    pub gold_boundaries: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: SyntheticTask,
    /// `V × input_dim` token embeddings shared by every example.
    pub embeddings: Matrix,
    pub examples: Vec<Example>,
}

/// Token embeddings depend only on the vocabulary, the input dimension and
/// `embedding_seed`, so held-out splits share them with the training split.
pub fn token_embeddings(vocab_size: usize, input_dim: usize, embedding_seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(embedding_seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut m = Matrix::from_fn(vocab_size, input_dim, |_, _| normal.sample(&mut rng));
    for i in 0..vocab_size {
        let row = m.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|v| *v /= norm);
    }
    m
}

/// Seed of the embedding table; fixed so every split of a task agrees.
pub const EMBEDDING_SEED: u64 = 0x5e_ed0f_704e;

/// Deterministic dataset for `task`.
pub fn gen_synthetic(task: &SyntheticTask) -> Result<Dataset> {
    task.validate()?;
    let embeddings = token_embeddings(task.vocab_size, task.input_dim, EMBEDDING_SEED);
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let noise = Normal::new(0.0, task.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| invalid(e.to_string()))?;
    let r = task.upsample;
    let examples = (0..task.num_examples)
        .map(|_| {
            let targets: Vec<usize> = (0..task.num_steps)
                .map(|_| rng.random_range(0..task.vocab_size))
                .collect();
            let frames = Matrix::from_fn(task.num_frames, task.input_dim, |t, k| {
                let clean = embeddings[(targets[t / r], k)];
                if task.noise_std > 0.0 {
                    clean + noise.sample(&mut rng)
                } else {
                    clean
                }
            });
            Example {
                frames,
                gold_boundaries: (1..=task.num_steps).map(|i| i * r).collect(),
                targets,
            }
        })
        .collect();
    Ok(Dataset {
        task: *task,
        embeddings,
        examples,
    })
}
