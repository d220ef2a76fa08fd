//! Evaluation metrics: relative accuracy improvement, undesirable-pixel ratio
//! and seed-to-seed mask consistency.

use alloc::vec::Vec;

use crate::error::{invalid, shape_err, Error, Result};
use crate::explainer::{explain, ExplainConfig, ExplanationResult, Mode};
use crate::models::Classifier;
use crate::tensor::Tensor;

/// Default threshold on the perturbation magnitude `1 − M′`.
pub const DEFAULT_THRESHOLD: f64 = 0.6;

/// Relative accuracy improvement in percent: `(after − before) / (1 − before) · 100`.
///
/// Errors when `before ≥ 1` (no headroom left).
pub fn phi(before: f64, after: f64) -> Result<f64> {
    if !before.is_finite() || !after.is_finite() || before >= 1.0 {
        return Err(invalid("phi needs a finite before-probability below 1"));
    }
    // scaling first keeps decimal inputs such as (0.6, 0.8) exact
    Ok((100.0 * after - 100.0 * before) / (1.0 - before))
}

/// Fraction of pixels whose perturbation magnitude `1 − M′` reaches `threshold`.
pub fn pixel_ratio(upsampled: &Tensor, threshold: f64) -> f64 {
    let n = upsampled
        .data()
        .iter()
        .filter(|&&m| 1.0 - m >= threshold)
        .count();
    n as f64 / upsampled.len() as f64
}

/// Pearson correlation of two equally shaped arrays. Errors on zero variance.
pub fn pearson(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err("pearson", a.shape(), b.shape()));
    }
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(invalid("correlation undefined for a constant mask"));
    }
    Ok((sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0))
}

/// Mean pairwise Pearson correlation of at least two masks.
pub fn consistency_score(masks: &[Tensor]) -> Result<f64> {
    if masks.len() < 2 {
        return Err(invalid("consistency needs at least two masks"));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            total += pearson(&masks[i], &masks[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Per-image metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRow {
    /// Position of the image in the batch.
    pub index: usize,
    /// Explained class (top-1 of the clean image in batch evaluation).
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

impl ImageRow {
    /// Metrics of one explanation.
    pub fn from_result(index: usize, r: &ExplanationResult, threshold: f64) -> Result<Self> {
        let before = r.eval_before.probs[r.target];
        let after = r.eval_after.probs[r.target];
        Ok(Self {
            index,
            target: r.target,
            before,
            after,
            phi: phi(before, after)?,
            pixel_ratio: pixel_ratio(&r.upsampled, threshold),
        })
    }
}

/// Aggregated batch metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Objective used.
    pub mode: Mode,
    /// Pixel-ratio threshold.
    pub threshold: f64,
    /// Successful rows in image order.
    pub rows: Vec<ImageRow>,
    /// Failed images with their error.
    pub failures: Vec<(usize, Error)>,
    /// Mean of the row φ values (0 when there are no rows).
    pub phi_mean: f64,
    /// Mean pixel ratio.
    pub pixel_ratio_mean: f64,
    /// Fraction of rows with `after > before`.
    pub improved_fraction: f64,
    /// Optional consistency score attached by the caller.
    pub consistency: Option<f64>,
}

impl MetricReport {
    /// Aggregates rows (sorted by index) and failures.
    pub fn aggregate(
        mode: Mode,
        threshold: f64,
        mut rows: Vec<ImageRow>,
        mut failures: Vec<(usize, Error)>,
    ) -> Self {
        rows.sort_by_key(|r| r.index);
        failures.sort_by_key(|f| f.0);
        let n = rows.len().max(1) as f64;
        let phi_mean = rows.iter().map(|r| r.phi).sum::<f64>() / n;
        let pixel_ratio_mean = rows.iter().map(|r| r.pixel_ratio).sum::<f64>() / n;
        let improved_fraction = rows.iter().filter(|r| r.after > r.before).count() as f64 / n;
        Self {
            mode,
            threshold,
            rows,
            failures,
            phi_mean,
            pixel_ratio_mean,
            improved_fraction,
            consistency: None,
        }
    }
}

/// Explains every image (target = top-1 class, as set in `config`) and collects
/// φ and the pixel ratio. Failures are recorded per image and do not stop the batch.
pub fn evaluate_batch(
    model: &impl Classifier,
    images: &[Tensor],
    config: &ExplainConfig,
    threshold: f64,
) -> Result<MetricReport> {
    if images.is_empty() {
        return Err(invalid("evaluate_batch needs at least one image"));
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (i, img) in images.iter().enumerate() {
        match explain(model, img, config).and_then(|r| ImageRow::from_result(i, &r, threshold)) {
            Ok(row) => rows.push(row),
            Err(e) => failures.push((i, e)),
        }
    }
    Ok(MetricReport::aggregate(
        config.mode,
        threshold,
        rows,
        failures,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_examples() {
        assert_eq!(phi(0.6, 0.8).unwrap(), 50.0);
        assert_eq!(phi(0.3, 0.3).unwrap(), 0.0);
        assert!(phi(0.5, 0.25).unwrap() < 0.0);
        assert!(phi(1.0, 1.0).is_err());
    }

    #[test]
    fn pixel_ratio_examples() {
        assert_eq!(pixel_ratio(&Tensor::full(&[4, 4], 1.0), 0.6), 0.0);
        assert_eq!(pixel_ratio(&Tensor::zeros(&[4, 4]), 0.6), 1.0);
        let m = Tensor::new(&[1, 4], alloc::vec![0.0, 0.3, 0.5, 0.9]).unwrap();
        assert_eq!(pixel_ratio(&m, 0.6), 0.5);
    }

    #[test]
    fn consistency_examples() {
        let m = Tensor::from_fn(&[3, 3], |i| (i as f64 * 0.13).fract());
        assert!((consistency_score(&[m.clone(), m.clone()]).unwrap() - 1.0).abs() < 1e-12);
        let inv = m.map(|v| 1.0 - v);
        assert!((consistency_score(&[m.clone(), inv]).unwrap() + 1.0).abs() < 1e-12);
        assert!(consistency_score(core::slice::from_ref(&m)).is_err());
        assert!(consistency_score(&[m, Tensor::full(&[3, 3], 0.5)]).is_err());
    }
}
