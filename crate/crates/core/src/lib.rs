//! Finds the pixels of an image that hold a classifier back from a target class.
//!
//! A low-resolution mask is learned by projected Adam. Where the mask is low, the
//! image is replaced by its Gaussian-blurred copy; the optimizer is rewarded for
//! raising the target-class probability and penalized for large or ragged masks.
//! Two extra regularizers pin either the non-target logits (F-TC) or the target
//! logit (F-NTC) so that repeated runs land on the same explanation.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, threading and the
//! command line live in the `undesir` crate.
//!
//! # Modules
//! - [`tensor`]: dense row-major arrays and the hand-written vector-Jacobian products.
//! - [`models`]: the classifier contract, a small reference CNN with its trainer,
//!   a transparent linear model and the synthetic dataset.
//! - [`perturbation`]: Gaussian blur, bilinear mask upsampling and the masking operator.
//! - [`objectives`]: TV and l1 regularizers, F-TC / F-NTC terms and the three losses.
//! - [`explainer`]: projected Adam over the mask.
//! - [`metrics`]: relative accuracy improvement, undesirable-pixel ratio, consistency.
//! - [`vjp`] and [`gradcheck`]: primitive dispatch and finite-difference self-checks.
#![no_std]
#![deny(unsafe_code)]
#![warn(missing_docs)]

extern crate alloc;

pub mod error;
pub mod explainer;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod objectives;
pub mod perturbation;
pub mod tensor;
pub mod vjp;

pub use error::{Error, Result};
pub use explainer::{explain, ExplainConfig, ExplanationResult, Mode, TargetClass};
pub use models::{Classifier, ClassifierEval, ClassifierSpec, ToyLinearModel};
pub use perturbation::{BlurConfig, Mask};
pub use tensor::Tensor;
