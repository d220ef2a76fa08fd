//! Classifiers seen as black boxes that still expose an input gradient.
//!
//! Two implementations are provided: [`ClassifierSpec`], a small convolutional
//! network described by a layer list, and [`ToyLinearModel`], whose logits are
//! plain inner products and therefore serve as a ground-truth oracle.

mod cnn;
pub mod dataset;
mod toy;
mod train;
pub mod weights;

use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{softmax, Tensor};

pub use cnn::{ClassifierSpec, LayerDesc};
pub use toy::ToyLinearModel;
pub use train::{accuracy, train_reference, TrainConfig, TrainReport};

/// Logits and softmax probabilities of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierEval {
    /// Pre-softmax outputs.
    pub logits: Vec<f64>,
    /// `softmax(logits)`.
    pub probs: Vec<f64>,
}

impl ClassifierEval {
    /// Builds the pair from logits.
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probs = softmax(&logits);
        Self { logits, probs }
    }

    /// Index of the most probable class (first one on ties).
    pub fn top1(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// A differentiable image classifier.
pub trait Classifier {
    /// Number of classes `N` (at least 2).
    fn num_classes(&self) -> usize;

    /// Expected `[H, W, C]` of input images.
    fn input_shape(&self) -> [usize; 3];

    /// Pre-softmax outputs for one image.
    fn logits(&self, image: &Tensor) -> Result<Vec<f64>>;

    /// Gradient of `⟨logits(image), cot⟩` with respect to the image.
    fn input_gradient(&self, image: &Tensor, cot: &[f64]) -> Result<Tensor>;

    /// Logits and probabilities.
    fn evaluate(&self, image: &Tensor) -> Result<ClassifierEval> {
        self.logits(image).map(ClassifierEval::from_logits)
    }

    /// Shape check shared by implementations.
    fn check_input(&self, image: &Tensor) -> Result<()> {
        let s = self.input_shape();
        if image.shape() != s {
            return Err(shape_err("classifier input", &s, image.shape()));
        }
        Ok(())
    }

    /// Errors unless `class < num_classes()`.
    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.num_classes() {
            return Err(Error::ClassOutOfRange {
                class,
                num_classes: self.num_classes(),
            });
        }
        Ok(())
    }
}

impl<T: Classifier + ?Sized> Classifier for &T {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn input_shape(&self) -> [usize; 3] {
        (**self).input_shape()
    }
    fn logits(&self, image: &Tensor) -> Result<Vec<f64>> {
        (**self).logits(image)
    }
    fn input_gradient(&self, image: &Tensor, cot: &[f64]) -> Result<Tensor> {
        (**self).input_gradient(image, cot)
    }
}

/// Either model kind, as decoded from a weight file.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    /// Reference convolutional network.
    Cnn(ClassifierSpec),
    /// Linear oracle model.
    Linear(ToyLinearModel),
}

impl Model {
    /// Decodes a weight buffer of either architecture.
    pub fn load(bytes: &[u8]) -> Result<Self> {
        let file = weights::decode(bytes)?;
        match file.architecture {
            weights::ARCH_REFERENCE_CNN => ClassifierSpec::from_weight_file(&file).map(Model::Cnn),
            weights::ARCH_TOY_LINEAR => ToyLinearModel::from_weight_file(&file).map(Model::Linear),
            other => Err(Error::WeightFormat(alloc::format!(
                "unknown architecture id {other}"
            ))),
        }
    }

    /// Encodes the model.
    pub fn save(&self) -> Vec<u8> {
        match self {
            Model::Cnn(m) => m.save_weights(),
            Model::Linear(m) => m.save_weights(),
        }
    }
}

impl Classifier for Model {
    fn num_classes(&self) -> usize {
        match self {
            Model::Cnn(m) => m.num_classes(),
            Model::Linear(m) => m.num_classes(),
        }
    }
    fn input_shape(&self) -> [usize; 3] {
        match self {
            Model::Cnn(m) => m.input_shape(),
            Model::Linear(m) => m.input_shape(),
        }
    }
    fn logits(&self, image: &Tensor) -> Result<Vec<f64>> {
        match self {
            Model::Cnn(m) => m.logits(image),
            Model::Linear(m) => m.logits(image),
        }
    }
    fn input_gradient(&self, image: &Tensor, cot: &[f64]) -> Result<Tensor> {
        match self {
            Model::Cnn(m) => m.input_gradient(image, cot),
            Model::Linear(m) => m.input_gradient(image, cot),
        }
    }
}
