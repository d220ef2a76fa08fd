//! Image perturbation: separable Gaussian blur, bilinear mask upsampling and
//! the masking operator `Q = X ∘ M′ + blur(X) ∘ (1 − M′)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;

/// Gaussian kernel parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurConfig {
    sigma: f64,
    kernel_size: usize,
}

impl BlurConfig {
    /// Blur used for 224×224 inputs (σ = 5, 11 taps).
    pub const FULL_SCALE: BlurConfig = BlurConfig {
        sigma: 5.0,
        kernel_size: 11,
    };
    /// Blur used for the 32×32 desk-scale inputs (σ = 2, 5 taps).
    pub const DESK_SCALE: BlurConfig = BlurConfig {
        sigma: 2.0,
        kernel_size: 5,
    };

    /// Validated constructor: `sigma > 0`, odd `kernel_size`.
    pub fn new(sigma: f64, kernel_size: usize) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid("blur sigma must be positive and finite"));
        }
        if kernel_size.is_multiple_of(2) {
            return Err(invalid("blur kernel size must be odd"));
        }
        Ok(Self { sigma, kernel_size })
    }

    /// Standard deviation.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Number of taps.
    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    /// Normalized 1-D kernel, centered.
    pub fn kernel_1d(&self) -> Vec<f64> {
        let r = (self.kernel_size / 2) as f64;
        let mut k: Vec<f64> = (0..self.kernel_size)
            .map(|i| {
                let d = i as f64 - r;
                libm::exp(-d * d / (2.0 * self.sigma * self.sigma))
            })
            .collect();
        let s: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= s);
        k
    }
}

/// Low-resolution perturbation mask with values in `[0, 1]`.
///
/// 1 keeps the original pixel, 0 replaces it with the blurred one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    grid: Tensor,
}

impl Mask {
    /// Wraps a rank-2 grid; every value must lie in `[0, 1]`.
    pub fn new(grid: Tensor) -> Result<Self> {
        grid.dims2()?;
        if grid.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("mask values must lie in [0, 1]"));
        }
        Ok(Self { grid })
    }

    /// Constant mask.
    pub fn filled(h: usize, w: usize, value: f64) -> Result<Self> {
        Self::new(Tensor::full(&[h, w], value))
    }

    /// The underlying `[h, w]` grid.
    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    /// `(h, w)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.grid.shape()[0], self.grid.shape()[1])
    }

    /// Unwraps the grid.
    pub fn into_grid(self) -> Tensor {
        self.grid
    }
}

fn replicate(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable Gaussian blur of an `[H, W, C]` image, channel by channel, with
/// replicated borders.
pub fn gaussian_blur(image: &Tensor, cfg: &BlurConfig) -> Result<Tensor> {
    let (h, w, c) = image.dims3()?;
    let k = cfg.kernel_1d();
    let r = (k.len() / 2) as isize;
    let x = image.data();
    let mut tmp = vec![0.0; x.len()];
    for y in 0..h {
        for xo in 0..w {
            let o = &mut tmp[(y * w + xo) * c..][..c];
            for (t, kv) in k.iter().enumerate() {
                let sx = replicate(xo as isize + t as isize - r, w);
                let p = &x[(y * w + sx) * c..][..c];
                o.iter_mut().zip(p).for_each(|(a, v)| *a += kv * v);
            }
        }
    }
    let mut out = vec![0.0; x.len()];
    for y in 0..h {
        for xo in 0..w {
            let o = &mut out[(y * w + xo) * c..][..c];
            for (t, kv) in k.iter().enumerate() {
                let sy = replicate(y as isize + t as isize - r, h);
                let p = &tmp[(sy * w + xo) * c..][..c];
                o.iter_mut().zip(p).for_each(|(a, v)| *a += kv * v);
            }
        }
    }
    Tensor::new(&[h, w, c], out)
}

/// Cotangent of [`gaussian_blur`] with respect to the image (the transposed filter).
pub fn gaussian_blur_vjp(cfg: &BlurConfig, cot: &Tensor) -> Result<Tensor> {
    let (h, w, c) = cot.dims3()?;
    let k = cfg.kernel_1d();
    let r = (k.len() / 2) as isize;
    let g = cot.data();
    let mut tmp = vec![0.0; g.len()];
    for y in 0..h {
        for xo in 0..w {
            let src = &g[(y * w + xo) * c..][..c];
            for (t, kv) in k.iter().enumerate() {
                let sy = replicate(y as isize + t as isize - r, h);
                tmp[(sy * w + xo) * c..][..c]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(a, v)| *a += kv * v);
            }
        }
    }
    let mut out = vec![0.0; g.len()];
    for y in 0..h {
        for xo in 0..w {
            let src = &tmp[(y * w + xo) * c..][..c];
            for (t, kv) in k.iter().enumerate() {
                let sx = replicate(xo as isize + t as isize - r, w);
                out[(y * w + sx) * c..][..c]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(a, v)| *a += kv * v);
            }
        }
    }
    Tensor::new(&[h, w, c], out)
}

/// Per-axis sampling table: for each output index, two source indices and the
/// weight of the second one.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|t| {
            let s = ((t as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = libm::floor(s) as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear upsampling of an `[h, w]` grid to `[H, W]` with half-pixel centers:
/// output index `t` samples the source at `(t + 0.5)·(src/dst) − 0.5`, clamped.
pub fn bilinear_upsample(grid: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let (h, w) = grid.dims2()?;
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(invalid("upsample target extents must be positive"));
    }
    if th < h || tw < w {
        return Err(invalid("upsample target must not be smaller than the mask"));
    }
    let ys = axis_taps(h, th);
    let xs = axis_taps(w, tw);
    let m = grid.data();
    let mut out = Vec::with_capacity(th * tw);
    for &(y0, y1, wy) in &ys {
        for &(x0, x1, wx) in &xs {
            let top = m[y0 * w + x0] * (1.0 - wx) + m[y0 * w + x1] * wx;
            let bot = m[y1 * w + x0] * (1.0 - wx) + m[y1 * w + x1] * wx;
            out.push(top * (1.0 - wy) + bot * wy);
        }
    }
    Tensor::new(&[th, tw], out)
}

/// Cotangent of [`bilinear_upsample`] with respect to the low-resolution grid.
pub fn bilinear_upsample_vjp(grid_dims: (usize, usize), cot: &Tensor) -> Result<Tensor> {
    let (h, w) = grid_dims;
    let (th, tw) = cot.dims2()?;
    if th < h || tw < w {
        return Err(invalid("upsample cotangent smaller than the mask"));
    }
    let ys = axis_taps(h, th);
    let xs = axis_taps(w, tw);
    let mut d = vec![0.0; h * w];
    let c = cot.data();
    for (ty, &(y0, y1, wy)) in ys.iter().enumerate() {
        for (tx, &(x0, x1, wx)) in xs.iter().enumerate() {
            let g = c[ty * tw + tx];
            d[y0 * w + x0] += g * (1.0 - wy) * (1.0 - wx);
            d[y0 * w + x1] += g * (1.0 - wy) * wx;
            d[y1 * w + x0] += g * wy * (1.0 - wx);
            d[y1 * w + x1] += g * wy * wx;
        }
    }
    Tensor::new(&[h, w], d)
}

fn check_apply_shapes(
    image: &Tensor,
    mask: &Tensor,
    blurred: &Tensor,
) -> Result<(usize, usize, usize)> {
    let (h, w, c) = image.dims3()?;
    if blurred.shape() != image.shape() {
        return Err(shape_err(
            "mask_apply blurred",
            image.shape(),
            blurred.shape(),
        ));
    }
    if mask.shape() != [h, w] {
        return Err(shape_err("mask_apply mask", &[h, w], mask.shape()));
    }
    Ok((h, w, c))
}

/// The masking operator: `X ∘ M′ + blurred ∘ (1 − M′)`, with the `[H, W]` mask
/// broadcast across channels.
pub fn mask_apply(image: &Tensor, upsampled: &Tensor, blurred: &Tensor) -> Result<Tensor> {
    let (h, w, c) = check_apply_shapes(image, upsampled, blurred)?;
    let mut out = Vec::with_capacity(h * w * c);
    for ((xp, bp), &m) in image
        .data()
        .chunks_exact(c)
        .zip(blurred.data().chunks_exact(c))
        .zip(upsampled.data())
    {
        out.extend(xp.iter().zip(bp).map(|(x, b)| x * m + b * (1.0 - m)));
    }
    Tensor::new(&[h, w, c], out)
}

/// Cotangent of [`mask_apply`] with respect to the upsampled mask:
/// `Σ_c cot ∘ (X − blurred)`.
pub fn mask_apply_vjp(image: &Tensor, blurred: &Tensor, cot: &Tensor) -> Result<Tensor> {
    let (h, w, c) = image.dims3()?;
    if blurred.shape() != image.shape() || cot.shape() != image.shape() {
        return Err(shape_err("mask_apply vjp", image.shape(), cot.shape()));
    }
    let d = image
        .data()
        .chunks_exact(c)
        .zip(blurred.data().chunks_exact(c))
        .zip(cot.data().chunks_exact(c))
        .map(|((xp, bp), cp)| {
            xp.iter()
                .zip(bp)
                .zip(cp)
                .map(|((x, b), g)| g * (x - b))
                .sum()
        })
        .collect();
    Tensor::new(&[h, w], d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outer(k: &[f64]) -> Vec<f64> {
        k.iter()
            .flat_map(|a| k.iter().map(move |b| a * b))
            .collect()
    }

    // Direct 2-D convolution with the outer-product kernel and clamped indices.
    fn direct_blur(img: &Tensor, cfg: &BlurConfig) -> Tensor {
        let (h, w, c) = img.dims3().unwrap();
        let s = cfg.kernel_size();
        let r = (s / 2) as isize;
        // kernel built from the closed form, independent of kernel_1d
        let raw: Vec<f64> = (0..s)
            .map(|i| {
                let d = i as f64 - r as f64;
                (-(d * d) / (2.0 * cfg.sigma() * cfg.sigma())).exp()
            })
            .collect();
        let k2 = outer(&raw);
        let norm: f64 = k2.iter().sum();
        Tensor::from_fn(&[h, w, c], |i| {
            let ch = i % c;
            let x = (i / c) % w;
            let y = i / (c * w);
            let mut acc = 0.0;
            for a in 0..s {
                for b in 0..s {
                    let sy = (y as isize + a as isize - r).clamp(0, h as isize - 1) as usize;
                    let sx = (x as isize + b as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += k2[a * s + b] / norm * img.data()[(sy * w + sx) * c + ch];
                }
            }
            acc
        })
    }

    #[test]
    fn kernel_is_normalized_and_even_size_rejected() {
        for cfg in [
            BlurConfig::FULL_SCALE,
            BlurConfig::DESK_SCALE,
            BlurConfig::new(0.3, 7).unwrap(),
        ] {
            assert!((cfg.kernel_1d().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(BlurConfig::new(5.0, 10).is_err());
        assert!(BlurConfig::new(0.0, 3).is_err());
    }

    #[test]
    fn constant_image_is_fixed_by_blur() {
        let img = Tensor::full(&[9, 7, 3], 0.42);
        let out = gaussian_blur(&img, &BlurConfig::FULL_SCALE).unwrap();
        assert!(out.max_abs_diff(&img).unwrap() < 1e-15);
    }

    #[test]
    fn impulse_response_is_outer_kernel() {
        let mut img = Tensor::zeros(&[11, 11, 1]);
        img.data_mut()[5 * 11 + 5] = 1.0;
        let cfg = BlurConfig::FULL_SCALE;
        let out = gaussian_blur(&img, &cfg).unwrap();
        let k = cfg.kernel_1d();
        let expected = Tensor::new(&[11, 11, 1], outer(&k)).unwrap();
        assert!(out.max_abs_diff(&expected).unwrap() < 1e-15);
    }

    #[test]
    fn separable_blur_matches_direct_convolution() {
        let mut s = 11u64;
        let img = Tensor::from_fn(&[13, 10, 3], |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            (s >> 11) as f64 / (1u64 << 53) as f64
        });
        let cfg = BlurConfig::new(2.0, 5).unwrap();
        let once = gaussian_blur(&img, &cfg).unwrap();
        assert!(once.max_abs_diff(&direct_blur(&img, &cfg)).unwrap() <= 1e-12);
        let twice = gaussian_blur(&once, &cfg).unwrap();
        let direct_twice = direct_blur(&direct_blur(&img, &cfg), &cfg);
        assert!(twice.max_abs_diff(&direct_twice).unwrap() <= 1e-12);
        assert!(twice.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn upsample_constant_and_shape() {
        let g = Tensor::full(&[28, 28], 0.3);
        let up = bilinear_upsample(&g, (224, 224)).unwrap();
        assert_eq!(up.shape(), &[224, 224]);
        assert!(up.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
        assert!(bilinear_upsample(&g, (0, 224)).is_err());
    }

    #[test]
    fn upsample_two_by_two_hand_evaluated() {
        let g = Tensor::new(&[2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let up = bilinear_upsample(&g, (4, 4)).unwrap();
        // source x = (t + 0.5)/2 - 0.5 = -0.25, 0.25, 0.75, 1.25 -> clamp to [0, 1]
        let row = [0.0, 0.25, 0.75, 1.0];
        for y in 0..4 {
            assert_eq!(&up.data()[y * 4..y * 4 + 4], &row);
        }
    }

    #[test]
    fn mask_apply_endpoints_are_exact() {
        let img = Tensor::from_fn(&[4, 5, 3], |i| (i as f64 * 0.37).fract());
        let blurred = gaussian_blur(&img, &BlurConfig::DESK_SCALE).unwrap();
        let ones = mask_apply(&img, &Tensor::full(&[4, 5], 1.0), &blurred).unwrap();
        assert_eq!(ones, img);
        let zeros = mask_apply(&img, &Tensor::zeros(&[4, 5]), &blurred).unwrap();
        assert_eq!(zeros, blurred);
        let half = mask_apply(&img, &Tensor::full(&[4, 5], 0.5), &blurred).unwrap();
        let mean = img.add(&blurred).unwrap().scale(0.5);
        assert!(half.max_abs_diff(&mean).unwrap() < 1e-15);
        assert!(mask_apply(&img, &Tensor::zeros(&[5, 4]), &blurred).is_err());
    }

    #[test]
    fn mask_range_checked() {
        assert!(Mask::new(Tensor::full(&[2, 2], 1.2)).is_err());
        assert!(Mask::new(Tensor::full(&[2], 0.5)).is_err());
        assert!(Mask::filled(2, 3, 0.5).is_ok());
    }
}
