//! Uniform forward / VJP dispatch over every differentiable primitive, so the
//! self-checks can treat them alike.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err, Result};
use crate::objectives;
use crate::perturbation::{self, BlurConfig};
use crate::tensor::{self, Padding, Tensor};

/// A differentiable primitive together with its non-differentiable settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// Inputs `[input, kernels]`.
    Conv2d(Padding),
    /// Inputs `[input, weights, bias]`.
    Dense,
    /// Inputs `[x]`.
    Relu,
    /// Inputs `[x]` of rank 3.
    AvgPool2,
    /// Inputs `[logits]` of rank 1.
    Softmax,
    /// Inputs `[a, b]`.
    Mul,
    /// Inputs `[a, b]`.
    Add,
    /// Inputs `[a]`, multiplied by the constant.
    Scale(f64),
    /// Inputs `[a]`; scalar output.
    Sum,
    /// Inputs `[mask]`; scalar `‖1 − M‖₁`.
    L1Deviation,
    /// Inputs `[mask]`; scalar TV with the given exponent.
    TvNorm(f64),
    /// Inputs `[x]`; scalar Euclidean norm.
    L2Norm,
    /// Inputs `[grid]` upsampled to `(H, W)`.
    BilinearUpsample(usize, usize),
    /// Inputs `[image]`.
    Blur(BlurConfig),
}

impl Primitive {
    /// Stable identifier.
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Conv2d(Padding::SameReplicate) => "conv2d-same",
            Primitive::Conv2d(Padding::Valid) => "conv2d-valid",
            Primitive::Dense => "dense",
            Primitive::Relu => "relu",
            Primitive::AvgPool2 => "avgpool2",
            Primitive::Softmax => "softmax",
            Primitive::Mul => "elementwise-mul",
            Primitive::Add => "elementwise-add",
            Primitive::Scale(_) => "scalar-scale",
            Primitive::Sum => "sum",
            Primitive::L1Deviation => "l1-deviation",
            Primitive::TvNorm(_) => "tv-norm",
            Primitive::L2Norm => "l2-norm-scalar",
            Primitive::BilinearUpsample(..) => "bilinear-upsample",
            Primitive::Blur(_) => "blur",
        }
    }

    /// Number of tensor inputs.
    pub fn arity(&self) -> usize {
        match self {
            Primitive::Dense => 3,
            Primitive::Conv2d(_) | Primitive::Mul | Primitive::Add => 2,
            _ => 1,
        }
    }

    /// Forward evaluation. Scalar outputs are returned with shape `[1]`.
    pub fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        self.check_arity(inputs)?;
        let scalar = |v: f64| Tensor::new(&[1], vec![v]);
        match *self {
            Primitive::Conv2d(p) => tensor::conv2d(&inputs[0], &inputs[1], p),
            Primitive::Dense => tensor::dense(&inputs[0], &inputs[1], &inputs[2]),
            Primitive::Relu => Ok(tensor::relu(&inputs[0])),
            Primitive::AvgPool2 => tensor::avgpool2(&inputs[0]),
            Primitive::Softmax => Tensor::new(inputs[0].shape(), tensor::softmax(inputs[0].data())),
            Primitive::Mul => inputs[0].mul(&inputs[1]),
            Primitive::Add => inputs[0].add(&inputs[1]),
            Primitive::Scale(s) => Ok(inputs[0].scale(s)),
            Primitive::Sum => scalar(inputs[0].sum()),
            Primitive::L1Deviation => scalar(objectives::l1_deviation(&inputs[0])),
            Primitive::TvNorm(beta) => scalar(objectives::tv_norm(&inputs[0], beta)?),
            Primitive::L2Norm => scalar(tensor::l2_norm(&inputs[0])),
            Primitive::BilinearUpsample(h, w) => {
                perturbation::bilinear_upsample(&inputs[0], (h, w))
            }
            Primitive::Blur(cfg) => perturbation::gaussian_blur(&inputs[0], &cfg),
        }
    }

    /// Input cotangents `Jᵀ·cot` at `inputs`, one per input.
    pub fn vjp(&self, inputs: &[Tensor], cot: &Tensor) -> Result<Vec<Tensor>> {
        self.check_arity(inputs)?;
        let out_shape = self.forward(inputs)?.shape().to_vec();
        if cot.shape() != out_shape.as_slice() {
            return Err(shape_err("vjp cotangent", &out_shape, cot.shape()));
        }
        let c0 = cot.data()[0];
        Ok(match *self {
            Primitive::Conv2d(p) => vec![
                tensor::conv2d_vjp_input(inputs[0].shape(), &inputs[1], p, cot)?,
                tensor::conv2d_vjp_kernels(&inputs[0], inputs[1].shape(), p, cot)?,
            ],
            Primitive::Dense => {
                let (dx, dw, db) = tensor::dense_vjp(&inputs[0], &inputs[1], cot)?;
                vec![dx, dw, db]
            }
            Primitive::Relu => vec![tensor::relu_vjp(&inputs[0], cot)?],
            Primitive::AvgPool2 => vec![tensor::avgpool2_vjp(inputs[0].shape(), cot)?],
            Primitive::Softmax => {
                let p = tensor::softmax(inputs[0].data());
                vec![Tensor::new(
                    inputs[0].shape(),
                    tensor::softmax_vjp(&p, cot.data())?,
                )?]
            }
            Primitive::Mul => {
                let (a, b) = tensor::mul_vjp(&inputs[0], &inputs[1], cot)?;
                vec![a, b]
            }
            Primitive::Add => vec![cot.clone(), cot.clone()],
            Primitive::Scale(s) => vec![cot.scale(s)],
            Primitive::Sum => vec![Tensor::full(inputs[0].shape(), c0)],
            Primitive::L1Deviation => vec![objectives::l1_deviation_grad(&inputs[0]).scale(c0)],
            Primitive::TvNorm(beta) => vec![objectives::tv_norm_grad(&inputs[0], beta)?.scale(c0)],
            Primitive::L2Norm => vec![tensor::l2_norm_vjp(&inputs[0], c0)],
            Primitive::BilinearUpsample(..) => {
                let (h, w) = inputs[0].dims2()?;
                vec![perturbation::bilinear_upsample_vjp((h, w), cot)?]
            }
            Primitive::Blur(cfg) => vec![perturbation::gaussian_blur_vjp(&cfg, cot)?],
        })
    }

    fn check_arity(&self, inputs: &[Tensor]) -> Result<()> {
        if inputs.len() != self.arity() {
            return Err(invalid(alloc::format!(
                "{} takes {} inputs, got {}",
                self.name(),
                self.arity(),
                inputs.len()
            )));
        }
        Ok(())
    }
}

/// Free-function form of [`Primitive::vjp`].
pub fn vjp(primitive: &Primitive, inputs: &[Tensor], cot: &Tensor) -> Result<Vec<Tensor>> {
    primitive.vjp(inputs, cot)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_example() {
        let x = Tensor::new(&[2], vec![-1.0, 2.0]).unwrap();
        let g = vjp(&Primitive::Relu, &[x], &Tensor::full(&[2], 1.0)).unwrap();
        assert_eq!(g[0].data(), &[0.0, 1.0]);
    }

    #[test]
    fn cotangent_shape_checked() {
        let x = Tensor::zeros(&[3]);
        assert!(vjp(&Primitive::Relu, core::slice::from_ref(&x), &Tensor::zeros(&[2])).is_err());
        assert!(vjp(&Primitive::Mul, &[x], &Tensor::zeros(&[3])).is_err());
    }
}
