//! Mini-batch Adam training and evaluation.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::data::PairedDataset;
use super::model::Cvae;
use super::CvaeError;
use crate::image::Image;
use crate::metrics::{report, MetricReport};
use crate::nn::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CvaeTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for CvaeTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 16,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvaeEpochLog {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

pub const CVAE_LOG_HEADER: &str = "epoch,loss,recon,kl";

impl fmt::Display for CvaeEpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.epoch, self.loss, self.recon, self.kl)
    }
}

#[derive(Debug, Clone)]
pub struct CvaeTrainOutcome {
    pub log: Vec<CvaeEpochLog>,
    pub optimizer: Adam,
}

impl CvaeTrainOutcome {
    pub fn log_text(&self) -> String {
        let mut s = format!("{CVAE_LOG_HEADER}\n");
        for l in &self.log {
            s.push_str(&format!("{l}\n"));
        }
        s
    }
}

pub fn train_cvae(
    model: &mut Cvae,
    data: &PairedDataset,
    config: &CvaeTrainConfig,
) -> Result<CvaeTrainOutcome, CvaeError> {
    if data.is_empty() {
        return Err(CvaeError::EmptyDataset);
    }
    if config.batch_size == 0 || config.epochs == 0 || !(config.learning_rate > 0.0) {
        return Err(CvaeError::InvalidConfig("batch size, epochs and learning rate must be positive".into()));
    }
    data.check(model.config())?;
    let l = model.config().latent_dim;
    let shapes = model.config().param_shapes();
    let mut adam = Adam::new(config.adam, &shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut recon, mut kl) = (0.0, 0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let n = batch.len();
            let (x, c) = data.gather(batch);
            let eps: Vec<f64> = (0..n * l).map(|_| rng.sample(StandardNormal)).collect();
            let (terms, grads) = model.loss_and_gradients(&x, &c, &eps, n)?;
            if !grads.iter().flatten().all(|g| g.is_finite()) {
                return Err(CvaeError::NonFiniteActivation(format!("gradient in epoch {}", epoch + 1)));
            }
            let mut params = model.params.tensors_mut();
            adam.update(&mut params, &grads, config.learning_rate)
                .map_err(|e| CvaeError::ShapeMismatch(e.to_string()))?;
            loss += terms.total * n as f64;
            recon += terms.recon * n as f64;
            kl += terms.kl * n as f64;
        }
        let k = data.len() as f64;
        let entry = CvaeEpochLog {
            epoch: epoch + 1,
            loss: loss / k,
            recon: recon / k,
            kl: kl / k,
        };
        log::info!("cvae epoch {entry}");
        log.push(entry);
    }
    Ok(CvaeTrainOutcome { log, optimizer: adam })
}

/// Reconstruct every condition with `z = 0`, in dataset order.
pub fn reconstruct_dataset(model: &Cvae, data: &PairedDataset) -> Result<Vec<Image>, CvaeError> {
    data.check(model.config())?;
    let side = model.config().input_side;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut outputs = Vec::with_capacity(data.len());
    for chunk in idx.chunks(16) {
        let (_, c) = data.gather(chunk);
        let out = model.reconstruct_batch(&c, chunk.len())?;
        for o in out.chunks(side * side) {
            outputs.push(Image::new(side, side, o.to_vec()).expect("square output"));
        }
    }
    Ok(outputs)
}

/// Score the `z = 0` reconstructions against their targets.
pub fn evaluate_cvae(model: &Cvae, data: &PairedDataset) -> Result<MetricReport, CvaeError> {
    if data.is_empty() {
        return Err(CvaeError::EmptyDataset);
    }
    let side = model.config().input_side;
    let outputs = reconstruct_dataset(model, data)?;
    let targets: Vec<Image> = data
        .samples
        .iter()
        .map(|s| Image::new(side, side, s.target.clone()).expect("square target"))
        .collect();
    report(
        data.samples
            .iter()
            .zip(targets.iter().zip(&outputs))
            .map(|(s, (t, o))| (s.name.clone(), t, o)),
    )
    .map_err(|e| CvaeError::Data(e.to_string()))
}
