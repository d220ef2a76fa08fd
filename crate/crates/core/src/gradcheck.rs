//! Central finite-difference checks of every VJP and of the three losses.
//!
//! The error measure is normwise: `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, 1e-12)`.

use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::models::{Classifier, ClassifierSpec, ToyLinearModel};
use crate::objectives::{self, FtcReading, LossConfig, Mode, PerturbationContext, RegWeights};
use crate::perturbation::{BlurConfig, Mask};
use crate::tensor::{Padding, Tensor};
use crate::vjp::Primitive;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Every primitive, with the settings the checks use.
pub fn all_primitives() -> Vec<Primitive> {
    vec![
        Primitive::Conv2d(Padding::SameReplicate),
        Primitive::Conv2d(Padding::Valid),
        Primitive::Dense,
        Primitive::Relu,
        Primitive::AvgPool2,
        Primitive::Softmax,
        Primitive::Mul,
        Primitive::Add,
        Primitive::Scale(1.7),
        Primitive::Sum,
        Primitive::L1Deviation,
        Primitive::TvNorm(2.0),
        Primitive::L2Norm,
        Primitive::BilinearUpsample(7, 5),
        Primitive::Blur(BlurConfig::DESK_SCALE),
    ]
}

/// Normwise relative error between two gradients.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-12)
}

/// Central-difference gradient of a scalar function.
pub fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = f(&probe)?;
        probe[i] = x[i] - FD_STEP;
        let down = f(&probe)?;
        probe[i] = x[i];
        g.push((up - down) / (2.0 * FD_STEP));
    }
    Ok(g)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Random inputs for a primitive, kept away from kinks by at least 10× the step.
pub fn sample_inputs(p: &Primitive, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    match *p {
        Primitive::Conv2d(Padding::SameReplicate) => {
            vec![
                uniform(rng, &[5, 4, 2], -1.0, 1.0),
                uniform(rng, &[3, 3, 2, 3], -1.0, 1.0),
            ]
        }
        Primitive::Conv2d(Padding::Valid) => {
            vec![
                uniform(rng, &[5, 5, 1], -1.0, 1.0),
                uniform(rng, &[3, 3, 1, 2], -1.0, 1.0),
            ]
        }
        Primitive::Dense => vec![
            uniform(rng, &[6], -1.0, 1.0),
            uniform(rng, &[4, 6], -1.0, 1.0),
            uniform(rng, &[4], -1.0, 1.0),
        ],
        Primitive::Relu => {
            vec![Tensor::from_fn(&[10], |_| {
                let v = rng.gen_range(0.01..1.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })]
        }
        Primitive::AvgPool2 => vec![uniform(rng, &[4, 6, 2], -1.0, 1.0)],
        Primitive::Softmax => vec![uniform(rng, &[5], -3.0, 3.0)],
        Primitive::Mul | Primitive::Add => {
            vec![
                uniform(rng, &[3, 4], -1.0, 1.0),
                uniform(rng, &[3, 4], -1.0, 1.0),
            ]
        }
        Primitive::Scale(_) => vec![uniform(rng, &[6], -1.0, 1.0)],
        Primitive::Sum => vec![uniform(rng, &[7], -1.0, 1.0)],
        Primitive::L1Deviation => vec![uniform(rng, &[3, 3], 0.05, 0.95)],
        Primitive::TvNorm(_) => vec![uniform(rng, &[4, 5], 0.0, 1.0)],
        Primitive::L2Norm => vec![uniform(rng, &[5], -1.0, 1.0)],
        Primitive::BilinearUpsample(..) => vec![uniform(rng, &[3, 2], 0.0, 1.0)],
        Primitive::Blur(_) => vec![uniform(rng, &[6, 7, 2], 0.0, 1.0)],
    }
}

/// Outcome of checking one primitive or loss.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    /// Primitive or loss name.
    pub name: &'static str,
    /// Number of random instances.
    pub trials: usize,
    /// Worst relative error over instances and inputs.
    pub max_rel_err: f64,
}

/// Checks one primitive at `trials` random points against central differences
/// of `⟨forward(x), c⟩` for a random cotangent `c`. With `corrupt`, the analytic
/// side is deliberately perturbed (negative control).
pub fn check_primitive(p: &Primitive, trials: usize, seed: u64, corrupt: bool) -> Result<CheckRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let inputs = sample_inputs(p, &mut rng);
        let out = p.forward(&inputs)?;
        let cot = uniform(&mut rng, out.shape(), -1.0, 1.0);
        let mut analytic = p.vjp(&inputs, &cot)?;
        if corrupt {
            analytic[0]
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = *v * 1.01 + 1e-3);
        }
        for (slot, a) in analytic.iter().enumerate() {
            let numeric = numeric_gradient(inputs[slot].data(), |x| {
                let mut args = inputs.clone();
                args[slot] = Tensor::new(inputs[slot].shape(), x.to_vec())?;
                let y = p.forward(&args)?;
                Ok(y.data().iter().zip(cot.data()).map(|(a, b)| a * b).sum())
            })?;
            worst = worst.max(relative_error(a.data(), &numeric));
        }
    }
    Ok(CheckRow {
        name: p.name(),
        trials,
        max_rel_err: worst,
    })
}

/// Mask gradient of a loss versus central differences over every mask entry.
pub fn check_loss_gradient(
    cfg: &LossConfig,
    model: &impl Classifier,
    ctx: &PerturbationContext,
    mask: &Tensor,
) -> Result<f64> {
    let analytic = objectives::loss(cfg, model, ctx, &Mask::new(mask.clone())?)?.mask_gradient;
    let numeric = numeric_gradient(mask.data(), |x| {
        let m = Mask::new(Tensor::new(mask.shape(), x.to_vec())?)?;
        Ok(objectives::loss(cfg, model, ctx, &m)?.total)
    })?;
    Ok(relative_error(analytic.data(), &numeric))
}

/// Checks the three losses on random 16×16 images, random reference-CNN
/// weights and random 4×4 masks.
pub fn check_losses(trials: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 3];
    for _ in 0..trials {
        let model = ClassifierSpec::init_reference([16, 16, 3], 5, rng.gen())?;
        let image = uniform(&mut rng, &[16, 16, 3], 0.0, 1.0);
        let ctx = PerturbationContext::new(&model, &image, &BlurConfig::DESK_SCALE)?;
        let mask = uniform(&mut rng, &[4, 4], 0.1, 0.9);
        let target = rng.gen_range(0..5);
        for (slot, mode) in Mode::ALL.into_iter().enumerate() {
            let cfg = LossConfig {
                mode,
                target,
                weights: RegWeights::default(),
                ftc_reading: FtcReading::Literal,
            };
            worst[slot] = worst[slot].max(check_loss_gradient(&cfg, &model, &ctx, &mask)?);
        }
    }
    Ok(Mode::ALL
        .into_iter()
        .zip(worst)
        .map(|(mode, e)| CheckRow {
            name: loss_name(mode),
            trials,
            max_rel_err: e,
        })
        .collect())
}

fn loss_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Plain => "loss-plain",
        Mode::Ftc => "loss-ftc",
        Mode::Fntc => "loss-fntc",
    }
}

/// Input gradient of a model versus central differences on `pixels` random pixels.
pub fn check_input_gradient(
    model: &impl Classifier,
    image: &Tensor,
    cot: &[f64],
    pixels: &[usize],
) -> Result<f64> {
    let g = model.input_gradient(image, cot)?;
    let f = |x: &Tensor| -> Result<f64> {
        Ok(model.logits(x)?.iter().zip(cot).map(|(a, b)| a * b).sum())
    };
    let mut analytic = Vec::with_capacity(pixels.len());
    let mut numeric = Vec::with_capacity(pixels.len());
    let mut probe = image.clone();
    for &i in pixels {
        let v = image.data()[i];
        probe.data_mut()[i] = v + FD_STEP;
        let up = f(&probe)?;
        probe.data_mut()[i] = v - FD_STEP;
        let down = f(&probe)?;
        probe.data_mut()[i] = v;
        analytic.push(g.data()[i]);
        numeric.push((up - down) / (2.0 * FD_STEP));
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Keeps the candidate pixels where `⟨logits, cot⟩` is locally smooth: the left
/// and right one-sided slopes agree to a relative 1e-3. A probe straddling a
/// ReLU kink fails this test and would make central differences meaningless.
pub fn smooth_pixels(
    model: &impl Classifier,
    image: &Tensor,
    cot: &[f64],
    candidates: &[usize],
) -> Result<Vec<usize>> {
    let f = |x: &Tensor| -> Result<f64> {
        Ok(model.logits(x)?.iter().zip(cot).map(|(a, b)| a * b).sum())
    };
    let centre = f(image)?;
    let mut probe = image.clone();
    let mut keep = Vec::with_capacity(candidates.len());
    for &i in candidates {
        let v = image.data()[i];
        probe.data_mut()[i] = v + FD_STEP;
        let right = (f(&probe)? - centre) / FD_STEP;
        probe.data_mut()[i] = v - FD_STEP;
        let left = (centre - f(&probe)?) / FD_STEP;
        probe.data_mut()[i] = v;
        if (right - left).abs() <= 1e-3 * right.abs().max(left.abs()).max(1e-6) {
            keep.push(i);
        }
    }
    Ok(keep)
}

/// Convenience for a linear model, used by the CLI self-check.
pub fn check_toy_model(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = (0..3)
        .map(|_| uniform(&mut rng, &[6, 6, 3], -1.0, 1.0))
        .collect();
    let model = ToyLinearModel::new(w, vec![0.1, -0.2, 0.3])?;
    let image = uniform(&mut rng, &[6, 6, 3], 0.0, 1.0);
    let pixels: Vec<usize> = (0..20).map(|_| rng.gen_range(0..image.len())).collect();
    check_input_gradient(&model, &image, &[0.3, -1.0, 2.0], &pixels)
}
