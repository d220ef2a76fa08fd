//! JSON documents written by the commands. Field order is the key order on disk.

use serde::{Deserialize, Serialize};
use undesir_core::explainer::{FtcReading, RegScale};
use undesir_core::models::dataset::BoxRegion;
use undesir_core::{ExplainConfig, TargetClass};

/// Resolved explainer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    /// `plain`, `ftc` or `fntc`.
    pub mode: String,
    /// Class index or `top1`.
    pub target: String,
    /// TV weight.
    pub lambda1: f64,
    /// l1 weight.
    pub lambda2: f64,
    /// TV exponent.
    pub beta: f64,
    /// F-TC / F-NTC weight.
    pub gamma: f64,
    /// `mean` or `sum`.
    pub reg_scale: String,
    /// `literal` or `vector`.
    pub ftc_reading: String,
    /// Blur standard deviation.
    pub sigma: f64,
    /// Blur taps.
    pub kernel_size: usize,
    /// Mask rows.
    pub mask_h: usize,
    /// Mask columns.
    pub mask_w: usize,
    /// Adam step size.
    pub lr: f64,
    /// Adam steps.
    pub iterations: usize,
    /// Initialization seed.
    pub seed: u64,
    /// Initialization band.
    pub init_band: [f64; 2],
    /// Pixel-ratio threshold.
    pub threshold: f64,
}

impl ConfigEcho {
    /// Echo of `cfg` with the pixel-ratio threshold.
    pub fn new(cfg: &ExplainConfig, threshold: f64) -> Self {
        Self {
            mode: cfg.mode.name().to_string(),
            target: match cfg.target {
                TargetClass::Top1 => "top1".to_string(),
                TargetClass::Index(k) => k.to_string(),
            },
            lambda1: cfg.weights.lambda1,
            lambda2: cfg.weights.lambda2,
            beta: cfg.weights.beta,
            gamma: cfg.weights.gamma,
            reg_scale: match cfg.weights.scale {
                RegScale::Mean => "mean",
                RegScale::Sum => "sum",
            }
            .to_string(),
            ftc_reading: match cfg.ftc_reading {
                FtcReading::Literal => "literal",
                FtcReading::Vector => "vector",
            }
            .to_string(),
            sigma: cfg.blur.sigma(),
            kernel_size: cfg.blur.kernel_size(),
            mask_h: cfg.mask_shape.0,
            mask_w: cfg.mask_shape.1,
            lr: cfg.lr,
            iterations: cfg.iterations,
            seed: cfg.seed,
            init_band: [cfg.init_band.0, cfg.init_band.1],
            threshold,
        }
    }
}

/// `result.json` of `explain`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainReport {
    /// Document version.
    pub schema: u32,
    /// Resolved target class.
    pub target: usize,
    /// `f_k(X)`.
    pub before: f64,
    /// `f_k(Q)`.
    pub after: f64,
    /// Relative accuracy improvement; null when `f_k(X) = 1`.
    pub phi: Option<f64>,
    /// Fraction of pixels with `1 − M′ ≥ threshold`.
    pub pixel_ratio: f64,
    /// Probabilities on `X`.
    pub probs_before: Vec<f64>,
    /// Probabilities on `Q`.
    pub probs_after: Vec<f64>,
    /// Logits on `X`.
    pub logits_before: Vec<f64>,
    /// Logits on `Q`.
    pub logits_after: Vec<f64>,
    /// Objective value before every step.
    pub trace: Vec<f64>,
    /// Hyperparameters.
    pub config: ConfigEcho,
}

/// One row of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    /// Position in the index.
    pub index: usize,
    /// Image file relative to the dataset directory.
    pub file: String,
    /// True label from the index.
    pub label: usize,
    /// Explained (top-1) class.
    pub target: usize,
    /// `f_k(X)`.
    pub before: f64,
    /// `f_k(Q)`.
    pub after: f64,
    /// Relative accuracy improvement.
    pub phi: f64,
    /// Undesirable-pixel ratio.
    pub pixel_ratio: f64,
}

/// An image whose explanation failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFailure {
    /// Position in the index.
    pub index: usize,
    /// Image file relative to the dataset directory.
    pub file: String,
    /// Error message.
    pub error: String,
}

/// `report.json` of `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Document version.
    pub schema: u32,
    /// Objective.
    pub mode: String,
    /// Images attempted.
    pub attempted: usize,
    /// Images explained.
    pub succeeded: usize,
    /// Images that failed.
    pub failed: usize,
    /// Mean φ over successful rows.
    pub phi_mean: f64,
    /// Mean pixel ratio over successful rows.
    pub pixel_ratio_mean: f64,
    /// Fraction of rows with `f_k(Q) > f_k(X)`.
    pub improved_fraction: f64,
    /// Per-image rows in index order.
    pub rows: Vec<EvalRow>,
    /// Failures in index order.
    pub failures: Vec<EvalFailure>,
    /// Hyperparameters.
    pub config: ConfigEcho,
}

/// `consistency.json` of `consistency`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Document version.
    pub schema: u32,
    /// Objective.
    pub mode: String,
    /// Seeds of the trials, in order.
    pub seeds: Vec<u64>,
    /// Mask files, in trial order.
    pub masks: Vec<String>,
    /// Mean pairwise Pearson correlation; null when a mask is constant.
    pub score: Option<f64>,
    /// Why the score is null.
    pub note: Option<String>,
    /// Hyperparameters of the first trial.
    pub config: ConfigEcho,
}

/// `train.json` of `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    /// Document version.
    pub schema: u32,
    /// Training images.
    pub n: usize,
    /// Dataset seed.
    pub data_seed: u64,
    /// Initialization and shuffling seed.
    pub seed: u64,
    /// Passes over the data.
    pub epochs: usize,
    /// Adam step size.
    pub lr: f64,
    /// Minibatch size.
    pub batch_size: usize,
    /// Label smoothing.
    pub label_smoothing: f64,
    /// Parameters of the network.
    pub parameters: usize,
    /// Mean loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Accuracy on the training images.
    pub train_accuracy: f64,
}

/// Confuser box as stored in the index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxJson {
    /// Top row.
    pub y0: usize,
    /// Left column.
    pub x0: usize,
    /// Height.
    pub h: usize,
    /// Width.
    pub w: usize,
}

impl From<BoxRegion> for BoxJson {
    fn from(b: BoxRegion) -> Self {
        Self {
            y0: b.y0,
            x0: b.x0,
            h: b.h,
            w: b.w,
        }
    }
}

impl From<BoxJson> for BoxRegion {
    fn from(b: BoxJson) -> Self {
        Self {
            y0: b.y0,
            x0: b.x0,
            h: b.h,
            w: b.w,
        }
    }
}

/// One image of an exported dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    /// Image file relative to the dataset directory.
    pub file: String,
    /// True class.
    pub label: usize,
    /// Class of the planted confuser.
    pub confuser_class: usize,
    /// Where the confuser was planted.
    pub confuser: BoxJson,
}

/// `index.json` of `dataset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    /// Document version.
    pub schema: u32,
    /// Generator seed.
    pub seed: u64,
    /// Image side.
    pub image_size: usize,
    /// Number of classes.
    pub num_classes: usize,
    /// Images in generation order.
    pub samples: Vec<IndexEntry>,
    /// Noise-free demonstration image.
    pub demo: IndexEntry,
}
