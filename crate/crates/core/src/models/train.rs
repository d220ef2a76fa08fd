use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Classifier, ClassifierSpec};
use crate::error::{shape_err, Error, Result};
use crate::explainer::{adam_step, AdamParams, AdamState};
use crate::tensor::{softmax, Tensor};

/// Trainer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Passes over the data. 0 returns the initialization.
    pub epochs: usize,
    /// Adam step size.
    pub lr: f64,
    /// Minibatch size.
    pub batch_size: usize,
    /// Seed for initialization and shuffling.
    pub seed: u64,
    /// Probability mass spread uniformly over all classes in the targets.
    pub label_smoothing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            lr: 0.005,
            batch_size: 32,
            seed: 7,
            label_smoothing: 0.05,
        }
    }
}

/// What the trainer measured.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean cross-entropy of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Accuracy of the returned weights on the training set.
    pub train_accuracy: f64,
}

/// Trains the reference CNN with label-smoothed softmax cross-entropy and Adam.
///
/// All images must share one shape; labels must be below `num_classes`.
/// Deterministic for a given config.
pub fn train_reference(
    images: &[Tensor],
    labels: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<(ClassifierSpec, TrainReport)> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if images.len() != labels.len() {
        return Err(shape_err("train labels", &[images.len()], &[labels.len()]));
    }
    let shape = images[0].shape();
    if let Some(bad) = images.iter().find(|i| i.shape() != shape) {
        return Err(shape_err("train images", shape, bad.shape()));
    }
    let (h, w, c) = images[0].dims3()?;
    let mut model = ClassifierSpec::init_reference([h, w, c], num_classes, cfg.seed)?;
    if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::ClassOutOfRange {
            class: l,
            num_classes,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0fda_7a5e_7000);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut params = model.flat_weights();
    let mut state = AdamState::new(params.len());
    let hp = AdamParams::with_lr(cfg.lr);
    let batch = cfg.batch_size.max(1);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut grad = vec![0.0; params.len()];
            for &i in chunk {
                let mut ce = 0.0;
                let (_, g) = model.logits_and_param_gradient(&images[i], |logits| {
                    let mut p = softmax(logits);
                    let off = cfg.label_smoothing / num_classes as f64;
                    ce = 0.0;
                    for (j, pj) in p.iter_mut().enumerate() {
                        let t = if j == labels[i] {
                            1.0 - cfg.label_smoothing + off
                        } else {
                            off
                        };
                        ce -= t * libm::log(pj.max(f64::MIN_POSITIVE));
                        *pj -= t;
                    }
                    p
                })?;
                total += ce;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            let inv = 1.0 / chunk.len() as f64;
            grad.iter_mut().for_each(|v| *v *= inv);
            adam_step(&mut params, &grad, &mut state, &hp)
                .map_err(|_| Error::Diverged { epoch })?;
            model.set_flat_weights(&params)?;
        }
        let mean = total / images.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        epoch_loss.push(mean);
    }

    let train_accuracy = accuracy(&model, images, labels)?;
    Ok((
        model,
        TrainReport {
            epoch_loss,
            train_accuracy,
        },
    ))
}

/// Fraction of images whose top-1 class equals the label.
pub fn accuracy(model: &impl Classifier, images: &[Tensor], labels: &[usize]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hits = 0usize;
    for (img, &l) in images.iter().zip(labels) {
        if model.evaluate(img)?.top1() == l {
            hits += 1;
        }
    }
    Ok(hits as f64 / images.len() as f64)
}
