//! Spiking neural network engine for action-unit recognition.
//!
//! Convolutional PLIF blocks encode event frames into spikes, PLIF
//! classifier blocks map them to `10 * n_classes` output neurons, and a
//! voting layer averages each group of ten into a class score. Scores are
//! averaged over the clip's timesteps. Training unrolls the recurrence and
//! backpropagates through time with an arctangent surrogate for the spike
//! derivative.

mod checkpoint;
mod network;
pub mod neuron;
mod spec;
mod train;

use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint, SNN_MAGIC};
pub use network::{mse_loss, one_hot, ForwardMode, ForwardPass, GradientSet, Layer, Network};
pub use neuron::{
    plif_step, surrogate_arctan, surrogate_step, NeuronParams, PlifState, SpikeFn, DEFAULT_ALPHA,
};
pub use spec::{LayerSpec, NetworkSpec, Shape, VOTE_GROUP};
pub use train::{
    evaluate, rank_classes, score_predictions, train, EpochLog, Evaluation, TrainConfig,
    TrainOutcome, LOG_HEADER,
};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SnnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward needs a recorded training-mode forward pass")]
    NoRecordedForward,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training needs at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("invalid network: {0}")]
    InvalidSpec(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
