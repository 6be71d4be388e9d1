//! Conditional VAE reconstructing grayscale frames from event frames.

mod checkpoint;
mod data;
mod model;
mod train;

use thiserror::Error;

pub use checkpoint::{read_cvae_checkpoint, write_cvae_checkpoint, CVAE_MAGIC};
pub use data::{load_pairs, PairedDataset, PairedSample};
pub use model::{
    elbo_loss, kl_divergence, reparameterize, Cvae, CvaeConfig, CvaeParams, ElboTerms, ReconstructMode,
    PARAM_NAMES,
};
pub use train::{evaluate_cvae, reconstruct_dataset, train_cvae, CvaeEpochLog, CvaeTrainConfig, CvaeTrainOutcome, CVAE_LOG_HEADER};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum CvaeError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("data: {0}")]
    Data(String),
}
