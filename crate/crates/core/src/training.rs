//! Minibatch supervised training and accuracy evaluation shared by
//! pretraining, fine-tuning attacks and scratch baselines.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::DomainDataset;
use crate::model::{argmax_rows, masked_step, Adam, GradScope, Real, SparsityMask, SplitClassifier};
use crate::objective::cross_entropy;
use crate::seed::Rng;
use crate::{Error, Result};

/// Adam with a step learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Clipped to the dataset size.
    pub batch_size: usize,
    /// Multiply the learning rate by `step_factor` every `step_every`
    /// epochs; `0` disables the schedule.
    pub step_every: usize,
    pub step_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 1e-3,
            batch_size: 256,
            step_every: 10,
            step_factor: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch_size == 0 {
            return Err(Error::invalid(format!("bad training config {self:?}")));
        }
        if !(self.step_factor > 0.0 && self.step_factor <= 1.0) {
            return Err(Error::invalid("step factor must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match epoch.checked_div(self.step_every) {
            Some(steps) => self.lr * self.step_factor.powi(steps as i32),
            None => self.lr,
        }
    }
}

/// Shuffled minibatch index lists covering `0..n` once.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.clamp(1, n.max(1))).map(<[usize]>::to_vec).collect()
}

/// Cross-entropy training on `ds`. Only parameters with `trainable[i]` move;
/// with a mask, pruned feature-extractor weights stay at zero. Returns the
/// mean training loss of each epoch.
pub fn train_supervised<T: Real>(
    model: &mut SplitClassifier<T>,
    ds: &DomainDataset,
    cfg: &TrainConfig,
    mask: Option<&SparsityMask>,
    trainable: &[bool],
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if ds.shape() != model.input_shape() {
        return Err(Error::shape(model.input_shape(), ds.shape()));
    }
    let head_only = trainable
        .iter()
        .zip(model.param_info())
        .all(|(t, info)| !t || info.part == crate::model::Part::Classifier);
    let scope = if head_only { GradScope::ClassifierOnly } else { GradScope::All };
    let mut opt = Adam::new();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut sum = 0.0;
        for idx in epoch_batches(ds.len(), cfg.batch_size, rng) {
            let batch = ds.batch::<T>(&idx);
            let trace = model.forward_trace(&batch.x)?;
            let (loss, d_logits) = cross_entropy(&trace.logits, &batch.y, model.num_classes())?;
            let grads = model.backward(&trace, None, Some(&d_logits), scope)?;
            masked_step(model, &mut opt, grads, lr, mask, trainable)?;
            sum += loss.f64() * idx.len() as f64;
        }
        losses.push(sum / ds.len() as f64);
    }
    Ok(losses)
}

/// Top-1 accuracy on every sample of `ds`.
pub fn accuracy<T: Real>(model: &SplitClassifier<T>, ds: &DomainDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let mut correct = 0usize;
    let all: Vec<usize> = (0..ds.len()).collect();
    for idx in all.chunks(256) {
        let batch = ds.batch::<T>(idx);
        let logits = model.forward(&batch.x)?;
        correct += argmax_rows(&logits, model.num_classes())
            .iter()
            .zip(&batch.y)
            .filter(|(p, y)| **p == **y as usize)
            .count();
    }
    Ok(correct as f64 / ds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_synthetic_domain_pair, Shift, SyntheticPairConfig};
    use crate::model::{ArchSpec, Shape3};
    use crate::seed;

    #[test]
    fn schedule_decays_every_step() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(9), 1e-3);
        assert!((cfg.lr_at(10) - 1e-4).abs() < 1e-18);
        assert!((cfg.lr_at(29) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn batches_partition_the_indices() {
        let mut rng = seed::rng(0);
        let b = epoch_batches(10, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn training_reduces_loss_and_beats_chance() {
        let pair = generate_synthetic_domain_pair(&SyntheticPairConfig {
            num_classes: 4,
            per_class: 40,
            image: Shape3::new(8, 8, 3),
            shift: Shift::Identity,
            seed: 1,
        })
        .unwrap();
        let arch = ArchSpec::registry("micro_cnn", Shape3::new(8, 8, 3), 4).unwrap();
        let mut model = SplitClassifier::<f32>::init(arch, &mut seed::rng(2)).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            lr: 3e-3,
            batch_size: 32,
            step_every: 0,
            step_factor: 1.0,
        };
        let trainable = vec![true; model.params.len()];
        let losses =
            train_supervised(&mut model, &pair.source.train, &cfg, None, &trainable, &mut seed::rng(3)).unwrap();
        assert!(losses.last().unwrap() < &(0.5 * losses[0]));
        assert!(accuracy(&model, &pair.source.test).unwrap() > 0.5);
    }
}
