use alloc::vec::Vec;

use super::weights::{self, WeightFile, ARCH_TOY_LINEAR};
use super::Classifier;
use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::Tensor;

/// Linear classifier `logit_i(X) = ⟨W_i, X⟩ + b_i`.
///
/// Its input gradient is exact and its response to any perturbation is a
/// closed-form inner product, which makes it the oracle for which regions
/// are undesirable for a class: blurring a region `R` raises `logit_k` iff
/// `⟨W_k|R, X − blur(X)⟩ < 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLinearModel {
    weights: Vec<Tensor>,
    bias: Vec<f64>,
}

impl ToyLinearModel {
    /// One weight image per class, all `[H, W, 3]`, and one bias per class.
    pub fn new(weights: Vec<Tensor>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(invalid("at least two classes are required"));
        }
        if weights.len() != bias.len() {
            return Err(shape_err("toy bias", &[weights.len()], &[bias.len()]));
        }
        let (_, _, c) = weights[0].dims3()?;
        if c != 3 {
            return Err(invalid("toy model weights must have 3 channels"));
        }
        if let Some(w) = weights.iter().find(|w| w.shape() != weights[0].shape()) {
            return Err(shape_err("toy weights", weights[0].shape(), w.shape()));
        }
        Ok(Self { weights, bias })
    }

    /// Template matcher around a flat background: `W_k = T_k − background`
    /// and `b_k = −⟨W_k, background⟩`, so `logit_k(X) = ⟨T_k − bg, X − bg⟩`.
    pub fn from_templates(templates: &[Tensor], background: f64) -> Result<Self> {
        let weights: Vec<Tensor> = templates
            .iter()
            .map(|t| t.map(|v| v - background))
            .collect();
        let bias = weights.iter().map(|w| -background * w.sum()).collect();
        Self::new(weights, bias)
    }

    /// Per-class weight images.
    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    /// Bias vector.
    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// `UNDW` encoding: weight images in class order, then the biases.
    pub fn save_weights(&self) -> Vec<u8> {
        let mut flat: Vec<f64> = self
            .weights
            .iter()
            .flat_map(|w| w.data().iter().copied())
            .collect();
        flat.extend_from_slice(&self.bias);
        weights::encode(ARCH_TOY_LINEAR, self.bias.len() as u32, &flat)
    }

    /// Decodes an `UNDW` buffer; the input is assumed square.
    pub fn load_weights(bytes: &[u8]) -> Result<Self> {
        Self::from_weight_file(&weights::decode(bytes)?)
    }

    pub(crate) fn from_weight_file(file: &WeightFile) -> Result<Self> {
        if file.architecture != ARCH_TOY_LINEAR {
            return Err(Error::WeightFormat("not a linear model".into()));
        }
        let n = file.num_classes as usize;
        let bad =
            || Error::WeightFormat("parameter count does not fit a square linear model".into());
        if n < 2 || file.params.len() < n || !(file.params.len() - n).is_multiple_of(3 * n) {
            return Err(bad());
        }
        let pixels = (file.params.len() - n) / (3 * n);
        let side = libm::sqrt(pixels as f64) as usize;
        if side == 0 || side * side != pixels {
            return Err(bad());
        }
        let per = pixels * 3;
        let weights = file.params[..n * per]
            .chunks_exact(per)
            .map(|c| Tensor::new(&[side, side, 3], c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(weights, file.params[n * per..].to_vec())
    }
}

impl Classifier for ToyLinearModel {
    fn num_classes(&self) -> usize {
        self.bias.len()
    }

    fn input_shape(&self) -> [usize; 3] {
        let s = self.weights[0].shape();
        [s[0], s[1], s[2]]
    }

    fn logits(&self, image: &Tensor) -> Result<Vec<f64>> {
        self.check_input(image)?;
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| {
                w.data()
                    .iter()
                    .zip(image.data())
                    .map(|(a, x)| a * x)
                    .sum::<f64>()
                    + b
            })
            .collect())
    }

    fn input_gradient(&self, image: &Tensor, cot: &[f64]) -> Result<Tensor> {
        self.check_input(image)?;
        if cot.len() != self.num_classes() {
            return Err(shape_err(
                "logit cotangent",
                &[self.num_classes()],
                &[cot.len()],
            ));
        }
        let mut g = Tensor::zeros(image.shape());
        for (w, &c) in self.weights.iter().zip(cot) {
            if c != 0.0 {
                g.axpy(c, w)?;
            }
        }
        Ok(g)
    }
}
