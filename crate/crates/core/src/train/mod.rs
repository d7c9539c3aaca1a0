//! Training loop, evaluation and the published evaluation protocols.

mod protocol;

pub use protocol::{
    run_protocol, Aggregate, ProtocolData, ProtocolEvent, ProtocolHooks, ProtocolReport, Sequential,
    SplitExecutor, SplitFailure,
};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_triplets, TripletBatch, TripletStrategy};
use crate::error::{ensure_shape, Error, Result};
use crate::metrics::{argmax_rows, binary_metrics, confusion, topk_accuracy, BinaryMetrics, ConfusionMatrix};
use crate::model::{Objective, RamanNet};
use crate::numerics::{softmax_cross_entropy, AdamConfig, AdamState, Matrix, Mode};

/// Which weights a training run keeps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Restore the epoch with the best validation accuracy (ties: lower
    /// validation loss, then earlier epoch).
    #[default]
    BestValidation,
    /// Keep the weights after the last epoch.
    FinalEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Epochs of the fine-tuning stage of the pretrain/fine-tune protocol.
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Triplet margin α.
    pub margin: f64,
    pub ce_weight: f64,
    pub triplet_weight: f64,
    pub triplet_strategy: TripletStrategy,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    pub selection: Selection,
    pub seed: u64,
    /// Use frozen batchnorm statistics while fine-tuning.
    pub freeze_batchnorm_on_finetune: bool,
    /// Class treated as positive for sensitivity/specificity (binary tasks).
    pub positive_class: usize,
    /// Top-k accuracies to report (values above the class count are skipped).
    pub top_k: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            finetune_epochs: 250,
            batch_size: 64,
            optimizer: AdamConfig::default(),
            margin: 1.0,
            ce_weight: 1.0,
            triplet_weight: 1.0,
            triplet_strategy: TripletStrategy::BatchHard,
            patience: None,
            selection: Selection::BestValidation,
            seed: 0,
            freeze_batchnorm_on_finetune: false,
            positive_class: 1,
            top_k: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2 (batchnorm)".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config("triplet margin must be non-negative".into()));
        }
        if !(self.ce_weight >= 0.0) || !(self.triplet_weight >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        self.optimizer.validate()
    }

    pub fn objective(&self) -> Objective {
        Objective {
            ce_weight: self.ce_weight,
            triplet_weight: self.triplet_weight,
            margin: self.margin,
        }
    }
}

/// Feature rows with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Samples {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        ensure_shape("label count", features.rows(), labels.len())?;
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean weighted loss over the epoch's minibatches.
    pub train_loss: f64,
    /// Accuracy of the train-mode (dropout active) predictions.
    pub train_accuracy: f64,
    pub validation_loss: Option<f64>,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were kept, when selected by validation.
    pub best_epoch: Option<usize>,
}

impl TrainingHistory {
    pub fn best_validation_accuracy(&self) -> Option<f64> {
        let e = self.best_epoch.or_else(|| self.epochs.last().map(|e| e.epoch))?;
        self.epochs.iter().find(|s| s.epoch == e)?.validation_accuracy
    }
}

/// Train `model` with minibatch Adam on the joint cross-entropy + triplet
/// objective. `freeze_statistics` trains with the batchnorm running
/// statistics held fixed.
pub fn train_one<R: Rng + ?Sized>(
    mut model: RamanNet,
    train: &Samples,
    validation: Option<&Samples>,
    cfg: &TrainConfig,
    epochs: usize,
    freeze_statistics: bool,
    rng: &mut R,
) -> Result<(RamanNet, TrainingHistory)> {
    cfg.validate()?;
    if epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    let input_len = model.config().input_len;
    ensure_shape("training input length", input_len, train.features.cols())?;
    if let Some(v) = validation {
        ensure_shape("validation input length", input_len, v.features.cols())?;
    }
    let classes = model.config().num_classes;
    if let Some(&label) = train.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, num_classes: classes });
    }
    if train.len() < 2 {
        return Err(Error::BatchTooSmall { size: train.len() });
    }
    let validation = validation.filter(|v| !v.is_empty());

    let shapes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    let mut adam = AdamState::new(cfg.optimizer, &shapes)?;
    let objective = cfg.objective();
    let mode = if freeze_statistics { Mode::FrozenStatistics } else { Mode::Train };

    let mut history = TrainingHistory {
        epochs: Vec::with_capacity(epochs),
        best_epoch: None,
    };
    let mut best: Option<(f64, f64, RamanNet)> = None;
    let mut since_improvement = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, chunk) in minibatches(&order, cfg.batch_size).into_iter().enumerate() {
            let x = train.features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let pass = model.forward(&x, mode, rng)?;
            let triplets = if cfg.triplet_weight > 0.0 {
                sample_triplets(&y, &pass.embeddings, cfg.triplet_strategy, rng)?
            } else {
                TripletBatch::default()
            };
            let (loss, grads) = model.backward(&pass, &y, &triplets, objective)?;
            if !loss.total.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    cross_entropy: loss.cross_entropy,
                    triplet: loss.triplet,
                });
            }
            adam.step(&mut model.parameters_mut(), &grads.as_slices())?;
            loss_sum += loss.total * chunk.len() as f64;
            correct += argmax_rows(&pass.logits)
                .iter()
                .zip(&y)
                .filter(|(p, t)| p == t)
                .count();
        }

        let (validation_loss, validation_accuracy) = match validation {
            Some(v) => {
                let (loss, acc) = loss_and_accuracy(&model, v)?;
                (Some(loss), Some(acc))
            }
            None => (None, None),
        };
        history.epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            validation_loss,
            validation_accuracy,
        });

        if let (Some(acc), Some(loss)) = (validation_accuracy, validation_loss) {
            let improved = best
                .as_ref()
                .map_or(true, |(ba, bl, _)| acc > *ba || (acc == *ba && loss < *bl));
            if improved {
                since_improvement = 0;
                history.best_epoch = Some(epoch);
                if cfg.selection == Selection::BestValidation {
                    best = Some((acc, loss, model.clone()));
                } else {
                    best = Some((acc, loss, RamanNet::zeros(*model.config())?));
                }
            } else {
                since_improvement += 1;
                if cfg.patience.is_some_and(|p| since_improvement >= p) {
                    break;
                }
            }
        }
    }

    match (cfg.selection, best) {
        (Selection::BestValidation, Some((_, _, kept))) => model = kept,
        _ => history.best_epoch = None,
    }
    Ok((model, history))
}

/// Chunks of `batch_size`; a trailing chunk of one sample is merged into the
/// previous chunk because batch statistics need two samples.
fn minibatches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut chunks: Vec<&[usize]> = order.chunks(batch_size).collect();
    if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() == 1) {
        chunks.pop();
        let start = (chunks.len() - 1) * batch_size;
        *chunks.last_mut().expect("at least one chunk") = &order[start..];
    }
    chunks
}

const INFER_CHUNK: usize = 256;

/// Inference-mode logits and embeddings for every row, computed in chunks.
pub fn predict(model: &RamanNet, features: &Matrix) -> Result<(Matrix, Matrix)> {
    let cfg = model.config();
    let mut logits = Matrix::zeros(features.rows(), cfg.num_classes);
    let mut embeddings = Matrix::zeros(features.rows(), cfg.embed_units);
    let all: Vec<usize> = (0..features.rows()).collect();
    for (c, chunk) in all.chunks(INFER_CHUNK).enumerate() {
        let (l, e) = model.infer(&features.select_rows(chunk))?;
        for (r, _) in chunk.iter().enumerate() {
            let row = c * INFER_CHUNK + r;
            logits.row_mut(row).copy_from_slice(l.row(r));
            embeddings.row_mut(row).copy_from_slice(e.row(r));
        }
    }
    Ok((logits, embeddings))
}

fn loss_and_accuracy(model: &RamanNet, samples: &Samples) -> Result<(f64, f64)> {
    let (logits, _) = predict(model, &samples.features)?;
    let (loss, _) = softmax_cross_entropy(&logits, &samples.labels)?;
    let correct = argmax_rows(&logits)
        .iter()
        .zip(&samples.labels)
        .filter(|(p, t)| p == t)
        .count();
    Ok((loss, correct as f64 / samples.len() as f64))
}

/// Held-out metrics of one model on one sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub samples: usize,
    pub accuracy: Option<f64>,
    pub confusion: ConfusionMatrix,
    /// Present for two-class tasks.
    pub binary: Option<BinaryMetrics>,
    /// `(k, accuracy)` pairs.
    pub top_k: Vec<(usize, f64)>,
}

pub fn evaluate(model: &RamanNet, samples: &Samples, positive_class: usize, top_k: &[usize]) -> Result<TestMetrics> {
    let classes = model.config().num_classes;
    let (logits, _) = predict(model, &samples.features)?;
    let predicted = argmax_rows(&logits);
    let cm = confusion(&samples.labels, &predicted, classes)?;
    let binary = if classes == 2 {
        Some(binary_metrics(&cm, positive_class)?)
    } else {
        None
    };
    let ks: Vec<usize> = top_k.iter().copied().filter(|&k| k >= 1 && k <= classes).collect();
    let top = topk_accuracy(&logits, &samples.labels, &ks)?;
    Ok(TestMetrics {
        samples: samples.len(),
        accuracy: cm.accuracy(),
        confusion: cm,
        binary,
        top_k: ks.into_iter().zip(top).collect(),
    })
}

/// One training phase of a run ("train", "pretrain", "finetune").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: String,
    pub history: TrainingHistory,
}

/// Everything recorded about one split of a protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub split_id: String,
    pub seed: u64,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub phases: Vec<PhaseRecord>,
    /// Present once the model has been evaluated on held-out test data.
    pub test: Option<TestMetrics>,
    pub parameter_count: usize,
    pub checkpoint: Option<String>,
    pub wall_time_secs: Option<f64>,
}

impl RunRecord {
    pub fn label(&self) -> String {
        format!("{} (seed {})", self.split_id, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_singleton_batches_are_merged() {
        let order: Vec<usize> = (0..9).collect();
        let chunks = minibatches(&order, 4);
        assert_eq!(chunks.iter().map(|c| c.len()).collect::<Vec<_>>(), vec![4, 5]);
        let chunks = minibatches(&order, 3);
        assert_eq!(chunks.len(), 3);
        let two: Vec<usize> = (0..2).collect();
        assert_eq!(minibatches(&two, 64).len(), 1);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..ok.clone() },
            TrainConfig { batch_size: 1, ..ok.clone() },
            TrainConfig { margin: -1.0, ..ok.clone() },
            TrainConfig { patience: Some(0), ..ok.clone() },
            TrainConfig { triplet_weight: f64::NAN, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
