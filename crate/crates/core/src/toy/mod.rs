//! A synthetic monotonic transduction task and a tiny encoder-decoder
//! trained on it through the attention layer of [`crate::grad`].

mod checkpoint;
mod eval;
mod headdrop;
mod model;
mod task;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use eval::{edit_distance, evaluate, tradeoff_csv, EvalOptions, ReferenceKind, ToyDecoder, TradeoffRow};
pub use headdrop::headdrop_mask;
pub use model::{
    backward, decoder_inputs, forward_cached, toy_forward, ForwardCache, ForwardOptions, ForwardOutput,
    ModelConfig, ToyModelParams, TrainMode,
};
pub use task::{gen_synthetic, token_embeddings, Dataset, Example, SyntheticTask, EMBEDDING_SEED};
pub use train::{
    batch_gradient, log_csv, teacher_forced_accuracy, train, EpochLog, TrainConfig, TrainOutcome,
};
