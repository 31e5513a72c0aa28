//! Vocabulary, samples and the differentiable reference classifier.

mod checkpoint;
mod classifier;
mod sample;
mod train;
mod vocab;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, ArrayHeader, CheckpointHeader,
    FORMAT_VERSION, MAGIC,
};
pub use classifier::{
    classification_loss, predict_from_logits, Architecture, BoundParams, ForwardPass, Pooling, ReferenceClassifier,
    DEFAULT_EMBEDDING_DIM, DEFAULT_HIDDEN_DIM,
};
pub(crate) use classifier::check_finite_rows;
pub use sample::{LabelSet, TaskMode, TextSample};
pub use train::{
    accuracy, classification_loss_value, loss_and_gradients, mean_loss, train_vanilla, BatchOutcome, Gradients,
    ParamGraph, Regime, StepRecord, TrainConfig, TrainedModel,
};
pub(crate) use train::{batch_classification_step, run_descent};
pub use vocab::{Vocabulary, MASK, PAD, UNK};
