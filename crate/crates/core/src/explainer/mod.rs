//! Projected Adam over the mask.
//!
//! Each run draws an initial mask uniformly from the init band, then repeats
//! `loss → adam_step → clamp to [0, 1]` for a fixed number of iterations.
//! The blurred image is computed once per run.

mod adam;

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use crate::objectives::{FtcReading, Mode, RegScale, RegWeights};
pub use adam::{adam_step, AdamParams, AdamState};

use crate::error::{invalid, Error, Result};
use crate::models::{Classifier, ClassifierEval};
use crate::objectives::{self, LossConfig, PerturbationContext};
use crate::perturbation::{BlurConfig, Mask};
use crate::tensor::Tensor;

/// Class to explain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetClass {
    /// A fixed class index.
    Index(usize),
    /// The model's most probable class on the clean image.
    Top1,
}

/// Hyperparameters of one explanation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplainConfig {
    /// Objective family.
    pub mode: Mode,
    /// Class `k`.
    pub target: TargetClass,
    /// λ1, λ2, β, γ.
    pub weights: RegWeights,
    /// F-TC norm placement.
    pub ftc_reading: FtcReading,
    /// Blur σ and kernel size.
    pub blur: BlurConfig,
    /// Low-resolution mask extents `(h, w)`.
    pub mask_shape: (usize, usize),
    /// Adam step size.
    pub lr: f64,
    /// Number of Adam steps.
    pub iterations: usize,
    /// Seed of the mask initialization.
    pub seed: u64,
    /// Uniform initialization band `(lo, hi)`.
    pub init_band: (f64, f64),
}

impl ExplainConfig {
    /// Settings for 224×224 inputs: 28×28 mask, σ = 5, 11 taps.
    pub fn full_scale() -> Self {
        Self {
            mask_shape: (28, 28),
            blur: BlurConfig::FULL_SCALE,
            ..Self::desk_scale()
        }
    }

    /// Settings for 32×32 inputs: 8×8 mask, σ = 2, 5 taps.
    pub fn desk_scale() -> Self {
        Self {
            mode: Mode::Ftc,
            target: TargetClass::Top1,
            weights: RegWeights::default(),
            ftc_reading: FtcReading::Literal,
            blur: BlurConfig::DESK_SCALE,
            mask_shape: (8, 8),
            lr: 0.1,
            iterations: 200,
            seed: 0,
            init_band: (0.4, 0.6),
        }
    }

    /// Checks the configuration against an image of extents `(H, W)`.
    pub fn validate(&self, image_dims: (usize, usize)) -> Result<()> {
        self.weights.validate()?;
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(invalid("learning rate must be finite and non-negative"));
        }
        if self.iterations == 0 {
            return Err(invalid("at least one iteration is required"));
        }
        let (lo, hi) = self.init_band;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(invalid("init band must satisfy 0 ≤ lo ≤ hi ≤ 1"));
        }
        let (mh, mw) = self.mask_shape;
        let (h, w) = image_dims;
        if mh == 0 || mw == 0 || mh > h || mw > w || mh * mw >= h * w {
            return Err(invalid(
                "mask must be non-empty, no larger than the image and have fewer cells",
            ));
        }
        Ok(())
    }
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self::desk_scale()
    }
}

/// Output of [`explain`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationResult {
    /// Learned low-resolution mask.
    pub mask: Mask,
    /// Mask upsampled to the image.
    pub upsampled: Tensor,
    /// Perturbed image `Q`.
    pub perturbed: Tensor,
    /// Model output on the clean image.
    pub eval_before: ClassifierEval,
    /// Model output on `Q`.
    pub eval_after: ClassifierEval,
    /// Loss value at every iteration, before that iteration's step.
    pub trace: Vec<f64>,
    /// Resolved target class.
    pub target: usize,
    /// Seed used for the initialization.
    pub seed: u64,
    /// Configuration of the run.
    pub config: ExplainConfig,
}

/// Clamps every element to `[0, 1]`.
pub fn project_mask(grid: &mut Tensor) {
    grid.data_mut()
        .iter_mut()
        .for_each(|v| *v = v.clamp(0.0, 1.0));
}

/// Mask drawn i.i.d. uniformly from `band` with a ChaCha8 stream seeded by `seed`.
pub fn init_mask(shape: (usize, usize), band: (f64, f64), seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = band;
    Tensor::from_fn(&[shape.0, shape.1], |_| lo + (hi - lo) * rng.gen::<f64>())
}

/// Resolves [`TargetClass`] against a clean evaluation.
pub fn resolve_target(target: TargetClass, clean: &ClassifierEval) -> usize {
    match target {
        TargetClass::Index(k) => k,
        TargetClass::Top1 => clean.top1(),
    }
}

/// Learns a mask for `image` under `config`.
pub fn explain(
    model: &impl Classifier,
    image: &Tensor,
    config: &ExplainConfig,
) -> Result<ExplanationResult> {
    model.check_input(image)?;
    config.validate((image.shape()[0], image.shape()[1]))?;
    let ctx = PerturbationContext::new(model, image, &config.blur)?;
    let target = resolve_target(config.target, &ctx.clean);
    model.check_class(target)?;
    let loss_cfg = LossConfig {
        mode: config.mode,
        target,
        weights: config.weights,
        ftc_reading: config.ftc_reading,
    };

    let mut grid = init_mask(config.mask_shape, config.init_band, config.seed);
    let mut state = AdamState::new(grid.len());
    let hp = AdamParams::with_lr(config.lr);
    let mut trace = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let mask = Mask::new(grid.clone())?;
        let eval = objectives::loss(&loss_cfg, model, &ctx, &mask)?;
        if !eval.total.is_finite() {
            return Err(Error::NonFinite {
                what: "objective",
                iteration: it,
            });
        }
        trace.push(eval.total);
        adam_step(grid.data_mut(), eval.mask_gradient.data(), &mut state, &hp).map_err(
            |e| match e {
                Error::NonFinite { what, .. } => Error::NonFinite {
                    what,
                    iteration: it,
                },
                other => other,
            },
        )?;
        project_mask(&mut grid);
    }

    let (upsampled, perturbed) = ctx.perturb(&grid)?;
    let eval_after = model.evaluate(&perturbed)?;
    Ok(ExplanationResult {
        mask: Mask::new(grid)?,
        upsampled,
        perturbed,
        eval_before: ctx.clean,
        eval_after,
        trace,
        target,
        seed: config.seed,
        config: *config,
    })
}
