//! Training loop and evaluation for the spiking classifier.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{ForwardMode, Network};
use super::SnnError;
use crate::nn::{cosine_lr, sigmoid, Adam, AdamConfig};
use crate::representation::InputClip;

/// Clips per forward pass during evaluation.
const EVAL_BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Clips longer than this many slices are truncated.
    pub max_steps: Option<usize>,
    /// Stop once validation accuracy reaches this value.
    pub stop_at_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 8,
            dropout_rate: 0.2,
            adam: AdamConfig::default(),
            seed: 0,
            max_steps: None,
            stop_at_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SnnError> {
        let bad = |m: &str| Err(SnnError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout rate must be in [0, 1)");
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return bad("Adam betas must be in [0, 1) and eps positive");
        }
        if self.max_steps == Some(0) {
            return bad("max steps must be at least 1");
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

impl fmt::Display for EpochLog {
    /// `epoch,lr,train_loss,train_acc,val_acc`; a missing validation accuracy
    /// is written as `NA`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{},", self.epoch, self.lr, self.train_loss, self.train_acc)?;
        match self.val_acc {
            Some(v) => write!(f, "{v}"),
            None => write!(f, "NA"),
        }
    }
}

pub const LOG_HEADER: &str = "epoch,lr,train_loss,train_acc,val_acc";

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub optimizer: Adam,
}

impl TrainOutcome {
    pub fn log_text(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for l in &self.log {
            s.push_str(&l.to_string());
            s.push('\n');
        }
        s
    }
}

fn truncate(clip: &InputClip, max_steps: Option<usize>) -> InputClip {
    match max_steps {
        Some(m) if clip.steps() > m => {
            InputClip::new(m, clip.side(), clip.data()[..m * clip.frame_len()].to_vec(), clip.label)
                .expect("prefix of a valid clip")
        }
        _ => clip.clone(),
    }
}

/// Mini-batch Adam on mean one-hot MSE with a cosine-annealed rate.
/// Deterministic for a given seed.
pub fn train(
    net: &mut Network,
    train_set: &[InputClip],
    val_set: Option<&[InputClip]>,
    config: &TrainConfig,
) -> Result<TrainOutcome, SnnError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(SnnError::EmptyDataset);
    }
    let mut labels: Vec<usize> = train_set.iter().map(|c| c.label).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(SnnError::TooFewClasses(labels.len()));
    }
    net.set_dropout(config.dropout_rate);
    let clips: Vec<InputClip> = train_set.iter().map(|c| truncate(c, config.max_steps)).collect();
    let shapes: Vec<usize> = net.param_tensors().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(config.adam, &shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let k = net.n_classes();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.learning_rate);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let refs: Vec<&InputClip> = batch.iter().map(|&i| &clips[i]).collect();
            let (loss, grads, pass) = net.loss_and_gradients(&refs, ForwardMode::TRAIN, &mut rng)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(SnnError::NonFinite(format!("epoch {}: loss {loss}", epoch + 1)));
            }
            loss_sum += loss * refs.len() as f64;
            correct += refs
                .iter()
                .enumerate()
                .filter(|(i, c)| rank_classes(pass.clip_scores(*i, k))[0] == c.label)
                .count();
            net.update_running_stats(&pass);
            let mut params: Vec<&mut [f64]> = net.params_mut().into_iter().map(|p| p.as_mut_slice()).collect();
            adam.update(&mut params, &grads.values, lr)
                .map_err(|e| SnnError::ShapeMismatch(e.to_string()))?;
            check_decays(net)?;
        }
        let val_acc = match val_set {
            Some(v) if !v.is_empty() => {
                let v: Vec<InputClip> = v.iter().map(|c| truncate(c, config.max_steps)).collect();
                Some(evaluate(net, &v)?.accuracy)
            }
            _ => None,
        };
        let entry = EpochLog {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / clips.len() as f64,
            train_acc: correct as f64 / clips.len() as f64,
            val_acc,
        };
        log::info!("{entry}");
        log.push(entry);
        if let (Some(target), Some(acc)) = (config.stop_at_accuracy, val_acc) {
            if acc >= target {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        log,
        optimizer: adam,
    })
}

/// Every leak factor must stay strictly inside (0, 1).
fn check_decays(net: &Network) -> Result<(), SnnError> {
    for l in net.layers() {
        if let super::network::Layer::Plif { w, .. } = l {
            let k = sigmoid(w[0]);
            if !(w[0].is_finite() && k > 0.0 && k < 1.0) {
                return Err(SnnError::NonFinite(format!("PLIF w = {} gives decay {k}", w[0])));
            }
        }
    }
    Ok(())
}

/// Class indices by descending score; ties go to the lower index.
pub fn rank_classes(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub top3_accuracy: f64,
    /// `confusion[label][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

/// Score a set of `[clips][n_classes]` predictions against labels.
pub fn score_predictions(scores: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<Evaluation, SnnError> {
    if scores.is_empty() {
        return Err(SnnError::EmptyDataset);
    }
    let mut confusion = vec![vec![0; n_classes]; n_classes];
    let mut top1 = 0;
    let mut top3 = 0;
    let mut predictions = Vec::with_capacity(scores.len());
    for (s, &label) in scores.iter().zip(labels) {
        let ranked = rank_classes(s);
        confusion[label][ranked[0]] += 1;
        top1 += usize::from(ranked[0] == label);
        top3 += usize::from(ranked.iter().take(3).any(|&c| c == label));
        predictions.push(ranked[0]);
    }
    let n = scores.len() as f64;
    Ok(Evaluation {
        accuracy: top1 as f64 / n,
        top3_accuracy: top3 as f64 / n,
        confusion,
        predictions,
    })
}

/// Accuracy, top-3 accuracy and confusion matrix in inference mode.
pub fn evaluate(net: &Network, clips: &[InputClip]) -> Result<Evaluation, SnnError> {
    if clips.is_empty() {
        return Err(SnnError::EmptyDataset);
    }
    let k = net.n_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut scores = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(EVAL_BATCH) {
        let refs: Vec<&InputClip> = chunk.iter().collect();
        let pass = net.forward(&refs, ForwardMode::EVAL, false, &mut rng)?;
        scores.extend((0..refs.len()).map(|i| pass.clip_scores(i, k).to_vec()));
    }
    let labels: Vec<usize> = clips.iter().map(|c| c.label).collect();
    score_predictions(&scores, &labels, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_breaks_ties_low() {
        assert_eq!(rank_classes(&[0.0, 0.0, 0.0]), vec![0, 1, 2]);
        assert_eq!(rank_classes(&[0.1, 0.5, 0.5, 0.2]), vec![1, 2, 3, 0]);
    }

    #[test]
    fn hand_counted_fixture() {
        // labels:      0    1    2    1    0
        // argmax:      0    2    2    1    1
        // top3 hit:    y    y    y    y    n (label 0 ranked 4th)
        let scores = vec![
            vec![0.9, 0.1, 0.0, 0.0],
            vec![0.1, 0.3, 0.6, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.2, 0.7, 0.1, 0.0],
            vec![0.0, 0.8, 0.5, 0.4],
        ];
        let e = score_predictions(&scores, &[0, 1, 2, 1, 0], 4).unwrap();
        assert!((e.accuracy - 3.0 / 5.0).abs() < 1e-15);
        assert!((e.top3_accuracy - 4.0 / 5.0).abs() < 1e-15);
        assert_eq!(e.confusion[1][2], 1);
        assert_eq!(e.confusion[0][1], 1);
        assert_eq!(e.confusion.iter().flatten().sum::<usize>(), 5);
    }

    #[test]
    fn perfect_scores() {
        let scores: Vec<Vec<f64>> = (0..4).map(|i| crate::snn::one_hot(i, 4)).collect();
        let e = score_predictions(&scores, &[0, 1, 2, 3], 4).unwrap();
        assert_eq!((e.accuracy, e.top3_accuracy), (1.0, 1.0));
    }

    #[test]
    fn log_line_format() {
        let l = EpochLog {
            epoch: 3,
            lr: 0.5,
            train_loss: 0.25,
            train_acc: 1.0,
            val_acc: None,
        };
        assert_eq!(l.to_string(), "3,0.5,0.25,1,NA");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            dropout_rate: 1.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn empty_and_single_class() {
        let spec = crate::snn::NetworkSpec::conv_plif(2, 4, &[2], &[20], 2, 0.0).unwrap();
        let mut net = Network::new(spec, 0).unwrap();
        let cfg = TrainConfig::default();
        assert_eq!(train(&mut net, &[], None, &cfg).unwrap_err(), SnnError::EmptyDataset);
        let c = InputClip::new(1, 4, vec![0.0; 32], 0).unwrap();
        assert_eq!(
            train(&mut net, &[c.clone(), c], None, &cfg).unwrap_err(),
            SnnError::TooFewClasses(1)
        );
        assert_eq!(evaluate(&net, &[]).unwrap_err(), SnnError::EmptyDataset);
    }
}
