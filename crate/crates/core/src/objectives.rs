//! Scalar objectives over a mask, each with its exact mask gradient.
//!
//! All losses are minimized:
//!
//! | mode  | class term            | regularizers          |
//! |-------|-----------------------|-----------------------|
//! | Plain | `−f_k(Q)`             | `R_M`                 |
//! | FTC   | `−f_k(Q)`             | `R_M + R_FTC`         |
//! | FNTC  | `Σ_{i≠k} f_i(Q)`      | `R_M + R_FNTC`        |
//!
//! with `R_M = λ1·TV_β(M) + λ2·‖1 − M‖₁`, `R_FTC = γ·|mean_{i≠k} Δlogit_i|` and
//! `R_FNTC = γ·|Δlogit_k|`, where `Δlogit = logits(Q) − logits(X)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::models::{Classifier, ClassifierEval};
use crate::perturbation::{self, BlurConfig, Mask};
use crate::tensor::{softmax_vjp, Tensor};

/// Which objective to minimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Target probability with TV and l1 only.
    Plain,
    /// Target probability, non-target logits pinned.
    Ftc,
    /// Non-target probabilities, target logit pinned.
    Fntc,
}

impl Mode {
    /// All modes, in a fixed order.
    pub const ALL: [Mode; 3] = [Mode::Plain, Mode::Ftc, Mode::Fntc];

    /// Lower-case name used on the command line and in reports.
    pub fn name(self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::Ftc => "ftc",
            Mode::Fntc => "fntc",
        }
    }

    /// Inverse of [`Mode::name`].
    pub fn from_name(s: &str) -> Option<Self> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// How the F-TC norm is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FtcReading {
    /// `γ·|(1/(N−1)) Σ_{i≠k} Δlogit_i|`: norm of the mean shift.
    #[default]
    Literal,
    /// `γ·(1/(N−1))·‖(Δlogit_i)_{i≠k}‖₂`: norm of the per-class shifts.
    Vector,
}

/// Normalization of the TV and l1 sums inside `R_M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RegScale {
    /// Plain sums over mask cells.
    Sum,
    /// Sums divided by the number of mask cells.
    #[default]
    Mean,
}

/// Regularizer weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegWeights {
    /// TV weight λ1.
    pub lambda1: f64,
    /// l1 weight λ2.
    pub lambda2: f64,
    /// TV exponent β.
    pub beta: f64,
    /// F-TC / F-NTC weight γ.
    pub gamma: f64,
    /// Normalization of the `R_M` sums.
    pub scale: RegScale,
}

impl Default for RegWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.7,
            lambda2: 3.0,
            beta: 2.0,
            gamma: 0.3,
            scale: RegScale::default(),
        }
    }
}

impl RegWeights {
    /// Checks finiteness and signs.
    pub fn validate(&self) -> Result<()> {
        let ok = [self.lambda1, self.lambda2, self.gamma]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && self.beta.is_finite()
            && self.beta > 0.0;
        if ok {
            Ok(())
        } else {
            Err(invalid(
                "regularizer weights must be finite, λ1, λ2, γ ≥ 0 and β > 0",
            ))
        }
    }
}

/// Everything that defines a loss apart from the mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Objective family.
    pub mode: Mode,
    /// Target class `k`.
    pub target: usize,
    /// Regularizer weights.
    pub weights: RegWeights,
    /// F-TC norm placement.
    pub ftc_reading: FtcReading,
}

/// Breakdown of a loss value. `total = class_term + tv + l1 + extra`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    /// `−f_k(Q)` or `Σ_{i≠k} f_i(Q)`.
    pub class_term: f64,
    /// Weighted TV term.
    pub tv: f64,
    /// Weighted l1 term.
    pub l1: f64,
    /// `R_FTC`, `R_FNTC`, or 0 in plain mode.
    pub extra: f64,
}

/// Value, breakdown and mask gradient of a loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    /// Loss value.
    pub total: f64,
    /// Signed terms summing to `total`.
    pub terms: ObjectiveTerms,
    /// `∂total/∂M`, same shape as the mask.
    pub mask_gradient: Tensor,
    /// Classifier output on the perturbed image.
    pub perturbed: ClassifierEval,
}

/// Image-side quantities that stay fixed while the mask changes.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationContext {
    /// Original image `X`.
    pub image: Tensor,
    /// `blur(X)`, computed once.
    pub blurred: Tensor,
    /// Classifier output on `X`.
    pub clean: ClassifierEval,
}

impl PerturbationContext {
    /// Blurs the image and evaluates the model on it.
    pub fn new(model: &impl Classifier, image: &Tensor, blur: &BlurConfig) -> Result<Self> {
        let clean = model.evaluate(image)?;
        let blurred = perturbation::gaussian_blur(image, blur)?;
        Ok(Self {
            image: image.clone(),
            blurred,
            clean,
        })
    }

    /// `(H, W)` of the image.
    pub fn image_dims(&self) -> (usize, usize) {
        (self.image.shape()[0], self.image.shape()[1])
    }

    /// Upsampled mask and perturbed image for a low-resolution mask grid.
    pub fn perturb(&self, mask: &Tensor) -> Result<(Tensor, Tensor)> {
        let up = perturbation::bilinear_upsample(mask, self.image_dims())?;
        let q = perturbation::mask_apply(&self.image, &up, &self.blurred)?;
        Ok((up, q))
    }
}

fn cell_diffs(m: &[f64], h: usize, w: usize, i: usize, j: usize) -> (f64, f64) {
    let v = m[i * w + j];
    let down = if i + 1 < h {
        m[(i + 1) * w + j] - v
    } else {
        0.0
    };
    let right = if j + 1 < w { m[i * w + j + 1] - v } else { 0.0 };
    (down, right)
}

/// Anisotropic-exponent total variation
/// `Σ_{i,j} (|M_{i+1,j} − M_{i,j}|^β + |M_{i,j+1} − M_{i,j}|^β)^{1/β}`;
/// differences that leave the grid count as 0.
pub fn tv_norm(mask: &Tensor, beta: f64) -> Result<f64> {
    let (h, w) = mask.dims2()?;
    let m = mask.data();
    let mut total = 0.0;
    for i in 0..h {
        for j in 0..w {
            let (a, b) = cell_diffs(m, h, w, i, j);
            let s = libm::pow(libm::fabs(a), beta) + libm::pow(libm::fabs(b), beta);
            if s > 0.0 {
                total += libm::pow(s, 1.0 / beta);
            }
        }
    }
    Ok(total)
}

/// Gradient of [`tv_norm`]. Cells whose two differences both vanish contribute 0.
pub fn tv_norm_grad(mask: &Tensor, beta: f64) -> Result<Tensor> {
    let (h, w) = mask.dims2()?;
    let m = mask.data();
    let mut g = vec![0.0; h * w];
    let partial = |d: f64, s: f64| {
        if d == 0.0 {
            0.0
        } else {
            libm::pow(s, 1.0 / beta - 1.0) * libm::pow(libm::fabs(d), beta - 1.0) * d.signum()
        }
    };
    for i in 0..h {
        for j in 0..w {
            let (a, b) = cell_diffs(m, h, w, i, j);
            let s = libm::pow(libm::fabs(a), beta) + libm::pow(libm::fabs(b), beta);
            if s == 0.0 {
                continue;
            }
            let (da, db) = (partial(a, s), partial(b, s));
            if i + 1 < h {
                g[(i + 1) * w + j] += da;
                g[i * w + j] -= da;
            }
            if j + 1 < w {
                g[i * w + j + 1] += db;
                g[i * w + j] -= db;
            }
        }
    }
    Tensor::new(&[h, w], g)
}

/// `‖1 − M‖₁`.
pub fn l1_deviation(mask: &Tensor) -> f64 {
    mask.data().iter().map(|m| libm::fabs(1.0 - m)).sum()
}

/// Gradient of [`l1_deviation`]. At `M = 1` the one-sided derivative from the
/// feasible side (−1) is used.
pub fn l1_deviation_grad(mask: &Tensor) -> Tensor {
    mask.map(|m| if m <= 1.0 { -1.0 } else { 1.0 })
}

fn check_target(n: usize, k: usize) -> Result<()> {
    if k >= n {
        return Err(crate::Error::ClassOutOfRange {
            class: k,
            num_classes: n,
        });
    }
    if n < 2 {
        return Err(invalid("at least two classes are required"));
    }
    Ok(())
}

/// `R_FTC` from logits on `Q` and on `X`, with its gradient with respect to the
/// logits on `Q`.
pub fn ftc_term(
    logits_q: &[f64],
    logits_x: &[f64],
    k: usize,
    gamma: f64,
    reading: FtcReading,
) -> Result<(f64, Vec<f64>)> {
    let n = logits_q.len();
    check_target(n, k)?;
    let scale = 1.0 / (n - 1) as f64;
    let delta: Vec<f64> = logits_q.iter().zip(logits_x).map(|(q, x)| q - x).collect();
    let mut grad = vec![0.0; n];
    let value = match reading {
        FtcReading::Literal => {
            let mean = scale
                * delta
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != k)
                    .map(|(_, d)| d)
                    .sum::<f64>();
            let sign = if mean > 0.0 {
                1.0
            } else if mean < 0.0 {
                -1.0
            } else {
                0.0
            };
            for (i, g) in grad.iter_mut().enumerate() {
                if i != k {
                    *g = gamma * sign * scale;
                }
            }
            gamma * libm::fabs(mean)
        }
        FtcReading::Vector => {
            let norm = libm::sqrt(
                delta
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != k)
                    .map(|(_, d)| d * d)
                    .sum::<f64>(),
            );
            if norm > 0.0 {
                for (i, g) in grad.iter_mut().enumerate() {
                    if i != k {
                        *g = gamma * scale * delta[i] / norm;
                    }
                }
            }
            gamma * scale * norm
        }
    };
    Ok((value, grad))
}

/// `R_FNTC = γ·|logit_k(Q) − logit_k(X)|` with its gradient with respect to the
/// logits on `Q`.
pub fn fntc_term(
    logits_q: &[f64],
    logits_x: &[f64],
    k: usize,
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = logits_q.len();
    check_target(n, k)?;
    let d = logits_q[k] - logits_x[k];
    let mut grad = vec![0.0; n];
    if d != 0.0 {
        grad[k] = gamma * d.signum();
    }
    Ok((gamma * libm::fabs(d), grad))
}

/// `R_FTC` evaluated through a model on an image and its perturbed copy.
pub fn r_ftc(
    model: &impl Classifier,
    image: &Tensor,
    perturbed: &Tensor,
    k: usize,
    gamma: f64,
    reading: FtcReading,
) -> Result<f64> {
    model.check_class(k)?;
    let lq = model.logits(perturbed)?;
    let lx = model.logits(image)?;
    Ok(ftc_term(&lq, &lx, k, gamma, reading)?.0)
}

/// `R_FNTC` evaluated through a model on an image and its perturbed copy.
pub fn r_fntc(
    model: &impl Classifier,
    image: &Tensor,
    perturbed: &Tensor,
    k: usize,
    gamma: f64,
) -> Result<f64> {
    model.check_class(k)?;
    let lq = model.logits(perturbed)?;
    let lx = model.logits(image)?;
    Ok(fntc_term(&lq, &lx, k, gamma)?.0)
}

/// Weighted `R_M` value and gradient, honoring [`RegScale`].
/// Returns `(tv_term, l1_term, gradient)`.
pub fn mask_regularizer(mask: &Tensor, w: &RegWeights) -> Result<(f64, f64, Tensor)> {
    let norm = match w.scale {
        RegScale::Sum => 1.0,
        RegScale::Mean => 1.0 / mask.len() as f64,
    };
    let tv = w.lambda1 * norm * tv_norm(mask, w.beta)?;
    let l1 = w.lambda2 * norm * l1_deviation(mask);
    let mut g = tv_norm_grad(mask, w.beta)?.scale(w.lambda1 * norm);
    g.axpy(w.lambda2 * norm, &l1_deviation_grad(mask))?;
    Ok((tv, l1, g))
}

/// Evaluates the configured loss at `mask` and its exact mask gradient.
pub fn loss(
    cfg: &LossConfig,
    model: &impl Classifier,
    ctx: &PerturbationContext,
    mask: &Mask,
) -> Result<ObjectiveEval> {
    let n = model.num_classes();
    model.check_class(cfg.target)?;
    check_target(n, cfg.target)?;
    let k = cfg.target;
    let grid = mask.grid();
    let (_, q) = ctx.perturb(grid)?;
    let eval_q = model.evaluate(&q)?;

    // class term and its cotangent on the probabilities
    let mut prob_cot = vec![0.0; n];
    let class_term = match cfg.mode {
        Mode::Plain | Mode::Ftc => {
            prob_cot[k] = -1.0;
            -eval_q.probs[k]
        }
        Mode::Fntc => {
            prob_cot
                .iter_mut()
                .enumerate()
                .filter(|(i, _)| *i != k)
                .for_each(|(_, c)| *c = 1.0);
            eval_q
                .probs
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != k)
                .map(|(_, p)| p)
                .sum()
        }
    };
    let mut logit_cot = softmax_vjp(&eval_q.probs, &prob_cot)?;

    let gamma = cfg.weights.gamma;
    let (extra, extra_grad) = match cfg.mode {
        Mode::Plain => (0.0, vec![0.0; n]),
        Mode::Ftc => ftc_term(&eval_q.logits, &ctx.clean.logits, k, gamma, cfg.ftc_reading)?,
        Mode::Fntc => fntc_term(&eval_q.logits, &ctx.clean.logits, k, gamma)?,
    };
    logit_cot
        .iter_mut()
        .zip(&extra_grad)
        .for_each(|(a, b)| *a += b);

    let d_q = model.input_gradient(&q, &logit_cot)?;
    let d_up = perturbation::mask_apply_vjp(&ctx.image, &ctx.blurred, &d_q)?;
    let mut mask_gradient = perturbation::bilinear_upsample_vjp(mask.dims(), &d_up)?;

    let (tv, l1, reg_grad) = mask_regularizer(grid, &cfg.weights)?;
    mask_gradient.axpy(1.0, &reg_grad)?;

    let terms = ObjectiveTerms {
        class_term,
        tv,
        l1,
        extra,
    };
    Ok(ObjectiveEval {
        total: class_term + tv + l1 + extra,
        terms,
        mask_gradient,
        perturbed: eval_q,
    })
}
