//! Command-line surface.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use undesir_core::explainer::{FtcReading, RegScale, RegWeights};
use undesir_core::metrics::DEFAULT_THRESHOLD;
use undesir_core::{BlurConfig, ExplainConfig, Mode, TargetClass};

/// Finds the pixels that hold a classifier back from a target class.
#[derive(Debug, Parser)]
#[command(name = "undesir", version, about)]
pub struct Cli {
    /// Subcommand to run.
    #[command(subcommand)]
    pub command: Command,
}

/// Subcommands.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the reference CNN on the synthetic dataset.
    Train(TrainArgs),
    /// Export the synthetic dataset as PPM images plus a JSON index.
    Dataset(DatasetArgs),
    /// Learn a mask for one image.
    Explain(ExplainArgs),
    /// Explain a dataset and report relative accuracy improvement and pixel ratio.
    Eval(EvalArgs),
    /// Compare every gradient against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Repeat an explanation over seeds and score mask agreement.
    Consistency(ConsistencyArgs),
}

/// `train` flags.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory receiving weights.undw, train.json and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of synthetic training images.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Seed of the synthetic training set.
    #[arg(long, default_value_t = 7)]
    pub data_seed: u64,
    /// Seed of weight initialization and shuffling.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Passes over the data.
    #[arg(long, default_value_t = 4)]
    pub epochs: usize,
    /// Adam step size.
    #[arg(long, default_value_t = 0.005)]
    pub lr: f64,
    /// Minibatch size.
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Label smoothing of the cross-entropy targets.
    #[arg(long, default_value_t = 0.05)]
    pub label_smoothing: f64,
}

/// `dataset` flags.
#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Directory receiving images/, index.json and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of images.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Generator seed. The default differs from the training seed so the set is held out.
    #[arg(long, default_value_t = 1007)]
    pub seed: u64,
}

/// Objective families as flag values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    /// TV + l1 only.
    Plain,
    /// Focus on the target class.
    Ftc,
    /// Focus on the non-target classes.
    Fntc,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Plain => Mode::Plain,
            ModeArg::Ftc => Mode::Ftc,
            ModeArg::Fntc => Mode::Fntc,
        }
    }
}

/// Norm placement of the F-TC regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadingArg {
    /// Norm of the mean non-target logit change.
    Literal,
    /// Scaled norm of the per-class changes.
    Vector,
}

/// Normalization of the mask regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RegScaleArg {
    /// Divide TV and l1 by the number of mask cells.
    Mean,
    /// Plain sums.
    Sum,
}

/// Default sizes for the mask and the blur.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleArg {
    /// Full scale for images of side 224 or more, desk scale otherwise.
    Auto,
    /// 8×8 mask, σ = 2, 5 taps.
    Desk,
    /// 28×28 mask, σ = 5, 11 taps.
    Full,
}

/// Hyperparameters shared by every explaining command.
#[derive(Debug, Clone, Args)]
pub struct HyperArgs {
    /// Objective.
    #[arg(long, value_enum, default_value_t = ModeArg::Ftc)]
    pub mode: ModeArg,
    /// Class to explain: an index or `top1`.
    #[arg(long, default_value = "top1")]
    pub target: String,
    /// Seed of the mask initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// TV weight λ1.
    #[arg(long, default_value_t = 1.7)]
    pub lambda1: f64,
    /// l1 weight λ2.
    #[arg(long, default_value_t = 3.0)]
    pub lambda2: f64,
    /// TV exponent β.
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,
    /// F-TC / F-NTC weight γ.
    #[arg(long, default_value_t = 0.3)]
    pub gamma: f64,
    /// Adam step size.
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Adam steps.
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    /// Default mask and blur sizes.
    #[arg(long, value_enum, default_value_t = ScaleArg::Auto)]
    pub scale: ScaleArg,
    /// Mask rows (overrides the scale default).
    #[arg(long)]
    pub mask_h: Option<usize>,
    /// Mask columns (overrides the scale default).
    #[arg(long)]
    pub mask_w: Option<usize>,
    /// Blur standard deviation (overrides the scale default).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Blur taps, odd (overrides the scale default).
    #[arg(long)]
    pub kernel_size: Option<usize>,
    /// F-TC norm placement.
    #[arg(long, value_enum, default_value_t = ReadingArg::Literal)]
    pub ftc_reading: ReadingArg,
    /// Mask regularizer normalization.
    #[arg(long, value_enum, default_value_t = RegScaleArg::Mean)]
    pub reg_scale: RegScaleArg,
    /// Lower end of the initialization band.
    #[arg(long, default_value_t = 0.4)]
    pub init_lo: f64,
    /// Upper end of the initialization band.
    #[arg(long, default_value_t = 0.6)]
    pub init_hi: f64,
    /// Pixel-ratio threshold on 1 − M′.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

/// Parses `top1` or a class index.
pub fn parse_target(s: &str) -> Result<TargetClass> {
    if s.eq_ignore_ascii_case("top1") {
        return Ok(TargetClass::Top1);
    }
    match s.parse::<usize>() {
        Ok(k) => Ok(TargetClass::Index(k)),
        Err(_) => bail!("target must be a class index or `top1`, got {s:?}"),
    }
}

impl HyperArgs {
    /// Resolves the flags into a config for an image of extents `(h, w)`.
    pub fn to_config(&self, image_dims: (usize, usize)) -> Result<ExplainConfig> {
        let full = match self.scale {
            ScaleArg::Full => true,
            ScaleArg::Desk => false,
            ScaleArg::Auto => image_dims.0.max(image_dims.1) >= 224,
        };
        let base = if full {
            ExplainConfig::full_scale()
        } else {
            ExplainConfig::desk_scale()
        };
        let blur = BlurConfig::new(
            self.sigma.unwrap_or(base.blur.sigma()),
            self.kernel_size.unwrap_or(base.blur.kernel_size()),
        )?;
        let cfg = ExplainConfig {
            mode: self.mode.into(),
            target: parse_target(&self.target)?,
            weights: RegWeights {
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                beta: self.beta,
                gamma: self.gamma,
                scale: match self.reg_scale {
                    RegScaleArg::Mean => RegScale::Mean,
                    RegScaleArg::Sum => RegScale::Sum,
                },
            },
            ftc_reading: match self.ftc_reading {
                ReadingArg::Literal => FtcReading::Literal,
                ReadingArg::Vector => FtcReading::Vector,
            },
            blur,
            mask_shape: (
                self.mask_h.unwrap_or(base.mask_shape.0),
                self.mask_w.unwrap_or(base.mask_shape.1),
            ),
            lr: self.lr,
            iterations: self.iterations,
            seed: self.seed,
            init_band: (self.init_lo, self.init_hi),
        };
        cfg.validate(image_dims)?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            bail!("threshold must lie in (0, 1)");
        }
        Ok(cfg)
    }
}

/// `explain` flags.
#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// PPM or PGM image.
    #[arg(long)]
    pub image: PathBuf,
    /// UNDW weight file.
    #[arg(long)]
    pub weights: PathBuf,
    /// Directory receiving mask.pgm, mask.f64, perturbed.ppm, result.json and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Hyperparameters.
    #[command(flatten)]
    pub hyper: HyperArgs,
}

/// `eval` flags.
#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `dataset`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// UNDW weight file.
    #[arg(long)]
    pub weights: PathBuf,
    /// Directory receiving report.json and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Use only the first `n` images of the index.
    #[arg(long)]
    pub n: Option<usize>,
    /// Hyperparameters. The target is always the top-1 class.
    #[command(flatten)]
    pub hyper: HyperArgs,
}

/// `gradcheck` flags.
#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seed of the random instances.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random instances per primitive and per loss.
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Test hook: corrupt the analytic gradient of this primitive.
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

/// `consistency` flags.
#[derive(Debug, Args)]
pub struct ConsistencyArgs {
    /// PPM or PGM image.
    #[arg(long)]
    pub image: PathBuf,
    /// UNDW weight file.
    #[arg(long)]
    pub weights: PathBuf,
    /// Directory receiving the per-trial masks, consistency.json and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of trials, at least 2.
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    /// Trial `i` uses seed `seed + i·seed_stride`; 0 repeats one seed.
    #[arg(long, default_value_t = 1)]
    pub seed_stride: u64,
    /// Hyperparameters; `--seed` is the first trial's seed.
    #[command(flatten)]
    pub hyper: HyperArgs,
}
