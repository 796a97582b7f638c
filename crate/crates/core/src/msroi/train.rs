use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::stack::image_tensor;
use super::{ClassMergeTable, MsroiError};
use crate::tensor::{sgd_step, Model, SgdOutcome, Tensor, TensorError};
use crate::{RgbImage, Scalar};

/// A model trained from image-level multi-hot labels.
pub trait Classifier<T: Scalar>: Model<T, Target = Vec<bool>> + Sync {
    fn categories(&self) -> usize;

    fn predict(&self, input: &Tensor<T>) -> Result<Vec<bool>, TensorError>;

    /// Loss and prediction from one forward pass.
    fn loss_with_prediction(&self, input: &Tensor<T>, target: &Vec<bool>) -> Result<(T, Vec<bool>), TensorError> {
        Ok((self.loss(input, target)?, self.predict(input)?))
    }

    /// Gradient accumulation plus the prediction made on the same forward pass.
    fn gradients_with_prediction(
        &self,
        input: &Tensor<T>,
        target: &Vec<bool>,
        grads: &mut [(Tensor<T>, Tensor<T>)],
    ) -> Result<(T, Vec<bool>), TensorError>;
}

/// An image with its raw (unmerged) labels.
#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub id: String,
    pub image: RgbImage,
    pub labels: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Sample<T> {
    pub input: Tensor<T>,
    pub target: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Evaluate batch elements on the rayon pool. Results are identical either way.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            learning_rate: 0.003,
            batch_size: 8,
            seed: 0,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-image loss over the epoch.
    pub loss: f64,
    /// Mean per-category agreement between prediction and labels.
    pub accuracy: f64,
    pub skipped_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub initial_accuracy: f64,
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_loss, |e| e.loss)
    }

    /// `epoch,loss,accuracy` lines, epoch 0 being the untrained model.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,accuracy\n");
        s.push_str(&format!("0,{:.6},{:.6}\n", self.initial_loss, self.initial_accuracy));
        for e in &self.epochs {
            s.push_str(&format!("{},{:.6},{:.6}\n", e.epoch, e.loss, e.accuracy));
        }
        s
    }
}

/// Converts labelled images into network inputs and merged multi-hot targets.
pub fn prepare_samples<T: Scalar>(
    data: &[LabeledImage],
    merge: &ClassMergeTable,
) -> Result<Vec<Sample<T>>, MsroiError> {
    if data.is_empty() {
        return Err(MsroiError::Dataset("empty dataset".into()));
    }
    data.iter()
        .map(|d| {
            let target = merge.indicator(&d.labels)?;
            if !target.iter().any(|&y| y) {
                return Err(MsroiError::Dataset(format!("image {} has no labels", d.id)));
            }
            Ok(Sample {
                input: image_tensor(&d.image),
                target,
            })
        })
        .collect()
}

fn label_agreement(pred: &[bool], target: &[bool]) -> f64 {
    let hits = pred.iter().zip(target).filter(|(a, b)| a == b).count();
    hits as f64 / target.len().max(1) as f64
}

/// Mean loss and label agreement without updating the model.
pub fn evaluate<T: Scalar, M: Classifier<T>>(model: &M, samples: &[Sample<T>]) -> Result<(f64, f64), MsroiError> {
    if samples.is_empty() {
        return Err(MsroiError::Dataset("empty dataset".into()));
    }
    let per: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| -> Result<(f64, f64), TensorError> {
            let (loss, pred) = model.loss_with_prediction(&s.input, &s.target)?;
            Ok((loss.to_f64_lossy(), label_agreement(&pred, &s.target)))
        })
        .collect::<Result<_, _>>()?;
    let n = per.len() as f64;
    Ok((
        per.iter().map(|p| p.0).sum::<f64>() / n,
        per.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

/// Mini-batch SGD. Deterministic for a given seed whether or not `parallel`
/// is set: per-image gradients are reduced in batch order.
pub fn train<T: Scalar, M: Classifier<T>>(
    model: &mut M,
    samples: &[Sample<T>],
    config: &TrainConfig,
) -> Result<TrainReport, MsroiError> {
    if samples.is_empty() {
        return Err(MsroiError::Dataset("empty dataset".into()));
    }
    if config.batch_size == 0 {
        return Err(MsroiError::Dataset("batch size must be positive".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.target.len() != model.categories()) {
        return Err(MsroiError::Dataset(format!(
            "target of {} labels for a {}-category model",
            s.target.len(),
            model.categories()
        )));
    }
    let (initial_loss, initial_accuracy) = evaluate(model, samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let lr = T::of(config.learning_rate);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut losses = vec![0.0; samples.len()];
        let mut agreement = vec![0.0; samples.len()];
        let mut skipped = 0;
        for batch in order.chunks(config.batch_size) {
            let m: &M = model;
            let work = |&i: &usize| -> Result<_, TensorError> {
                let mut g = m.empty_gradients();
                let (loss, pred) = m.gradients_with_prediction(&samples[i].input, &samples[i].target, &mut g)?;
                Ok((i, loss, pred, g))
            };
            let results: Vec<_> = if config.parallel {
                batch.par_iter().map(work).collect::<Result<_, _>>()?
            } else {
                batch.iter().map(work).collect::<Result<_, _>>()?
            };
            let scale = T::one() / T::of(batch.len() as f64);
            for (i, loss, pred, grads) in results {
                losses[i] = loss.to_f64_lossy();
                agreement[i] = label_agreement(&pred, &samples[i].target);
                for (layer, (mut gk, mut gb)) in model.layers_mut().iter_mut().zip(grads) {
                    gk.scale(scale);
                    gb.scale(scale);
                    layer.accumulate(&gk, &gb)?;
                }
            }
            if let SgdOutcome::SkippedNonFinite { .. } = sgd_step(model.layers_mut(), lr) {
                skipped += 1;
            }
        }
        let n = samples.len() as f64;
        epochs.push(EpochStats {
            epoch,
            loss: losses.iter().sum::<f64>() / n,
            accuracy: agreement.iter().sum::<f64>() / n,
            skipped_steps: skipped,
        });
    }
    Ok(TrainReport {
        initial_loss,
        initial_accuracy,
        epochs,
    })
}
