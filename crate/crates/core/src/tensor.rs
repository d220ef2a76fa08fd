//! Dense row-major `f64` arrays plus the forward and vector-Jacobian-product
//! (VJP) kernels the rest of the crate composes by hand.
//!
//! Images are `[H, W, C]` with the channel index fastest. Convolution kernels
//! are `[Kh, Kw, Cin, Cout]`, dense weights are `[out, in]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err, Result};

/// A dense array of 64-bit reals in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Wraps `data` with the given shape. Every extent must be positive and the
    /// product of the extents must equal `data.len()`.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(invalid(alloc::format!(
                "extents must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err("Tensor::new", shape, &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Tensor of the given shape filled with `value`.
    ///
    /// Panics if an extent is zero.
    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "extents must be positive"
        );
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Tensor of zeros.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().enumerate().for_each({
            let mut f = f;
            move |(i, v)| *v = f(i)
        });
        t
    }

    /// Shape extents.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Flat row-major data.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable flat data. The shape cannot change through this handle.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Consumes the tensor and returns its buffer.
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false; tensors have at least one element.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// `(H, W, C)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(shape_err("dims3", &[0, 0, 0], &self.shape)),
        }
    }

    /// `(H, W)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [h, w] => Ok((h, w)),
            _ => Err(shape_err("dims2", &[0, 0], &self.shape)),
        }
    }

    /// True when no element is NaN or infinite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise map.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_err(op, &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Elementwise sum.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    /// Elementwise difference.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    /// Multiplies every element by `s`.
    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// Sum of all elements.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err("axpy", &self.shape, &other.shape));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += s * b);
        Ok(())
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(shape_err("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max))
    }
}

/// Border handling for [`conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output keeps the input extents; out-of-range taps read the nearest border pixel.
    SameReplicate,
    /// Only positions where the kernel fits entirely.
    Valid,
}

struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    ho: usize,
    wo: usize,
    padding: Padding,
}

impl ConvGeom {
    fn new(input: &[usize], kernels: &[usize], padding: Padding) -> Result<Self> {
        let (h, w, cin) = match *input {
            [h, w, c] => (h, w, c),
            _ => return Err(shape_err("conv2d", &[0, 0, 0], input)),
        };
        let (kh, kw, kcin, cout) = match *kernels {
            [a, b, c, d] => (a, b, c, d),
            _ => return Err(shape_err("conv2d kernels", &[0, 0, 0, 0], kernels)),
        };
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(invalid("conv2d kernel extents must be odd"));
        }
        if kcin != cin {
            return Err(shape_err("conv2d channels", &[cin], &[kcin]));
        }
        let (ho, wo) = match padding {
            Padding::SameReplicate => (h, w),
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(invalid("conv2d valid: kernel larger than input"));
                }
                (h - kh + 1, w - kw + 1)
            }
        };
        Ok(Self {
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            ho,
            wo,
            padding,
        })
    }

    #[inline]
    fn src(&self, y: usize, x: usize, ky: usize, kx: usize) -> usize {
        let (iy, ix) = match self.padding {
            Padding::Valid => (y + ky, x + kx),
            Padding::SameReplicate => {
                let iy = (y + ky) as isize - (self.kh / 2) as isize;
                let ix = (x + kx) as isize - (self.kw / 2) as isize;
                (
                    iy.clamp(0, self.h as isize - 1) as usize,
                    ix.clamp(0, self.w as isize - 1) as usize,
                )
            }
        };
        (iy * self.w + ix) * self.cin
    }
}

/// 2-D cross-correlation of an `[H, W, Cin]` input with `[Kh, Kw, Cin, Cout]` kernels.
pub fn conv2d(input: &Tensor, kernels: &Tensor, padding: Padding) -> Result<Tensor> {
    let g = ConvGeom::new(input.shape(), kernels.shape(), padding)?;
    let mut out = vec![0.0; g.ho * g.wo * g.cout];
    let k = kernels.data();
    let x = input.data();
    for y in 0..g.ho {
        for xo in 0..g.wo {
            let o = &mut out[(y * g.wo + xo) * g.cout..][..g.cout];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let px = &x[g.src(y, xo, ky, kx)..][..g.cin];
                    let kbase = (ky * g.kw + kx) * g.cin * g.cout;
                    for (ci, &v) in px.iter().enumerate() {
                        let krow = &k[kbase + ci * g.cout..][..g.cout];
                        o.iter_mut().zip(krow).for_each(|(a, &kv)| *a += v * kv);
                    }
                }
            }
        }
    }
    Tensor::new(&[g.ho, g.wo, g.cout], out)
}

/// Cotangent of [`conv2d`] with respect to its input.
pub fn conv2d_vjp_input(
    input_shape: &[usize],
    kernels: &Tensor,
    padding: Padding,
    cot: &Tensor,
) -> Result<Tensor> {
    let g = ConvGeom::new(input_shape, kernels.shape(), padding)?;
    if cot.shape() != [g.ho, g.wo, g.cout] {
        return Err(shape_err("conv2d vjp", &[g.ho, g.wo, g.cout], cot.shape()));
    }
    let mut d = vec![0.0; g.h * g.w * g.cin];
    let k = kernels.data();
    let c = cot.data();
    for y in 0..g.ho {
        for xo in 0..g.wo {
            let crow = &c[(y * g.wo + xo) * g.cout..][..g.cout];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let base = g.src(y, xo, ky, kx);
                    let kbase = (ky * g.kw + kx) * g.cin * g.cout;
                    for ci in 0..g.cin {
                        let krow = &k[kbase + ci * g.cout..][..g.cout];
                        d[base + ci] += krow.iter().zip(crow).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
    }
    Tensor::new(&[g.h, g.w, g.cin], d)
}

/// Cotangent of [`conv2d`] with respect to its kernels.
pub fn conv2d_vjp_kernels(
    input: &Tensor,
    kernel_shape: &[usize],
    padding: Padding,
    cot: &Tensor,
) -> Result<Tensor> {
    let g = ConvGeom::new(input.shape(), kernel_shape, padding)?;
    if cot.shape() != [g.ho, g.wo, g.cout] {
        return Err(shape_err("conv2d vjp", &[g.ho, g.wo, g.cout], cot.shape()));
    }
    let mut d = vec![0.0; g.kh * g.kw * g.cin * g.cout];
    let x = input.data();
    let c = cot.data();
    for y in 0..g.ho {
        for xo in 0..g.wo {
            let crow = &c[(y * g.wo + xo) * g.cout..][..g.cout];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let px = &x[g.src(y, xo, ky, kx)..][..g.cin];
                    let kbase = (ky * g.kw + kx) * g.cin * g.cout;
                    for (ci, &v) in px.iter().enumerate() {
                        let drow = &mut d[kbase + ci * g.cout..][..g.cout];
                        drow.iter_mut().zip(crow).for_each(|(a, &cv)| *a += v * cv);
                    }
                }
            }
        }
    }
    Tensor::new(kernel_shape, d)
}

/// Adds a per-channel bias to an `[H, W, C]` tensor in place.
pub fn add_channel_bias(t: &mut Tensor, bias: &[f64]) -> Result<()> {
    let (_, _, c) = t.dims3()?;
    if bias.len() != c {
        return Err(shape_err("channel bias", &[c], &[bias.len()]));
    }
    for px in t.data_mut().chunks_exact_mut(c) {
        px.iter_mut().zip(bias).for_each(|(a, b)| *a += b);
    }
    Ok(())
}

/// Cotangent of [`add_channel_bias`] with respect to the bias.
pub fn channel_bias_vjp(cot: &Tensor) -> Result<Vec<f64>> {
    let (_, _, c) = cot.dims3()?;
    let mut d = vec![0.0; c];
    for px in cot.data().chunks_exact(c) {
        d.iter_mut().zip(px).for_each(|(a, b)| *a += b);
    }
    Ok(d)
}

/// Fully connected layer: `out = W · flatten(input) + b`, `W` is `[out, in]`.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n_out, n_in) = weights.dims2()?;
    if input.len() != n_in {
        return Err(shape_err("dense input", &[n_in], &[input.len()]));
    }
    if bias.shape() != [n_out] {
        return Err(shape_err("dense bias", &[n_out], bias.shape()));
    }
    let x = input.data();
    let out = weights
        .data()
        .chunks_exact(n_in)
        .zip(bias.data())
        .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
        .collect();
    Tensor::new(&[n_out], out)
}

/// Cotangents of [`dense`]: `(d_input, d_weights, d_bias)`.
/// The input cotangent keeps the input's shape.
pub fn dense_vjp(
    input: &Tensor,
    weights: &Tensor,
    cot: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n_out, n_in) = weights.dims2()?;
    if cot.shape() != [n_out] {
        return Err(shape_err("dense vjp", &[n_out], cot.shape()));
    }
    if input.len() != n_in {
        return Err(shape_err("dense input", &[n_in], &[input.len()]));
    }
    let mut dx = vec![0.0; n_in];
    let mut dw = vec![0.0; n_out * n_in];
    for (j, (&c, row)) in cot
        .data()
        .iter()
        .zip(weights.data().chunks_exact(n_in))
        .enumerate()
    {
        dx.iter_mut().zip(row).for_each(|(a, w)| *a += c * w);
        dw[j * n_in..][..n_in]
            .iter_mut()
            .zip(input.data())
            .for_each(|(a, v)| *a = c * v);
    }
    Ok((
        Tensor::new(input.shape(), dx)?,
        Tensor::new(&[n_out, n_in], dw)?,
        cot.clone(),
    ))
}

/// Rectified linear unit.
pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Cotangent of [`relu`]; the derivative at exactly zero is taken as 0.
pub fn relu_vjp(input: &Tensor, cot: &Tensor) -> Result<Tensor> {
    input.zip_with(cot, "relu vjp", |x, c| if x > 0.0 { c } else { 0.0 })
}

/// 2×2 average pooling with stride 2 over an `[H, W, C]` tensor with even H and W.
pub fn avgpool2(input: &Tensor) -> Result<Tensor> {
    let (h, w, c) = input.dims3()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(invalid("avgpool2 needs even spatial extents"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = vec![0.0; ho * wo * c];
    for y in 0..ho {
        for xo in 0..wo {
            let o = &mut out[(y * wo + xo) * c..][..c];
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let p = &x[((2 * y + dy) * w + 2 * xo + dx) * c..][..c];
                o.iter_mut().zip(p).for_each(|(a, v)| *a += 0.25 * v);
            }
        }
    }
    Tensor::new(&[ho, wo, c], out)
}

/// Cotangent of [`avgpool2`].
pub fn avgpool2_vjp(input_shape: &[usize], cot: &Tensor) -> Result<Tensor> {
    let (h, w, c) = match *input_shape {
        [h, w, c] => (h, w, c),
        _ => return Err(shape_err("avgpool2 vjp", &[0, 0, 0], input_shape)),
    };
    let (ho, wo) = (h / 2, w / 2);
    if cot.shape() != [ho, wo, c] {
        return Err(shape_err("avgpool2 vjp", &[ho, wo, c], cot.shape()));
    }
    let mut d = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let src = &cot.data()[((y / 2) * wo + x / 2) * c..][..c];
            d[(y * w + x) * c..][..c]
                .iter_mut()
                .zip(src)
                .for_each(|(a, v)| *a = 0.25 * v);
        }
    }
    Tensor::new(input_shape, d)
}

/// Numerically stable softmax: the largest logit is subtracted before exponentiation.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| libm::exp(v - max)).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

/// Cotangent of [`softmax`] given its output `probs`: `p ∘ (c − ⟨p, c⟩)`.
pub fn softmax_vjp(probs: &[f64], cot: &[f64]) -> Result<Vec<f64>> {
    if probs.len() != cot.len() {
        return Err(shape_err("softmax vjp", &[probs.len()], &[cot.len()]));
    }
    let dot: f64 = probs.iter().zip(cot).map(|(p, c)| p * c).sum();
    Ok(probs.iter().zip(cot).map(|(p, c)| p * (c - dot)).collect())
}

/// Cotangents of [`Tensor::mul`]: `(cot ∘ b, cot ∘ a)`.
pub fn mul_vjp(a: &Tensor, b: &Tensor, cot: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((cot.mul(b)?, cot.mul(a)?))
}

/// Euclidean norm of all elements.
pub fn l2_norm(x: &Tensor) -> f64 {
    libm::sqrt(x.data().iter().map(|v| v * v).sum())
}

/// Cotangent of [`l2_norm`]; zero at the origin.
pub fn l2_norm_vjp(x: &Tensor, cot: f64) -> Tensor {
    let n = l2_norm(x);
    if n == 0.0 {
        return Tensor::zeros(x.shape());
    }
    x.scale(cot / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_valid_conv(x: &Tensor, k: &Tensor) -> Tensor {
        let (h, w, cin) = x.dims3().unwrap();
        let [kh, kw, _, cout] = *k.shape() else {
            unreachable!()
        };
        let (ho, wo) = (h - kh + 1, w - kw + 1);
        Tensor::from_fn(&[ho, wo, cout], |i| {
            let co = i % cout;
            let xo = (i / cout) % wo;
            let y = i / (cout * wo);
            let mut s = 0.0;
            for a in 0..kh {
                for b in 0..kw {
                    for ci in 0..cin {
                        s += x.data()[((y + a) * w + xo + b) * cin + ci]
                            * k.data()[((a * kw + b) * cin + ci) * cout + co];
                    }
                }
            }
            s
        })
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64) / ((1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn identity_kernel_leaves_input_unchanged() {
        let x = Tensor::from_fn(&[3, 3, 1], |i| i as f64 * 0.1);
        let k = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(conv2d(&x, &k, Padding::SameReplicate).unwrap(), x);
        assert_eq!(conv2d(&x, &k, Padding::Valid).unwrap(), x);
    }

    #[test]
    fn constant_input_normalized_kernel_same_replicate() {
        let x = Tensor::full(&[5, 4, 1], 0.37);
        let k = Tensor::from_fn(&[3, 3, 1, 1], |i| (i + 1) as f64 / 45.0);
        let y = conv2d(&x, &k, Padding::SameReplicate).unwrap();
        assert_eq!(y.shape(), &[5, 4, 1]);
        for v in y.data() {
            assert!((v - 0.37).abs() < 1e-15);
        }
    }

    #[test]
    fn valid_conv_matches_nested_loops() {
        let mut s = 42;
        let x = Tensor::from_fn(&[5, 5, 1], |_| lcg(&mut s));
        let k = Tensor::from_fn(&[3, 3, 1, 1], |_| lcg(&mut s));
        let y = conv2d(&x, &k, Padding::Valid).unwrap();
        assert!(y.max_abs_diff(&direct_valid_conv(&x, &k)).unwrap() <= 1e-12);

        let x = Tensor::from_fn(&[6, 7, 3], |_| lcg(&mut s));
        let k = Tensor::from_fn(&[3, 5, 3, 4], |_| lcg(&mut s));
        let y = conv2d(&x, &k, Padding::Valid).unwrap();
        assert!(y.max_abs_diff(&direct_valid_conv(&x, &k)).unwrap() <= 1e-12);
    }

    #[test]
    fn conv_channel_mismatch_is_an_error() {
        let x = Tensor::zeros(&[4, 4, 2]);
        let k = Tensor::zeros(&[3, 3, 3, 1]);
        assert!(matches!(
            conv2d(&x, &k, Padding::Valid),
            Err(crate::Error::ShapeMismatch { .. })
        ));
        let k = Tensor::zeros(&[2, 3, 2, 1]);
        assert!(conv2d(&x, &k, Padding::Valid).is_err());
    }

    #[test]
    fn relu_vjp_is_zero_on_negatives() {
        let x = Tensor::new(&[2], vec![-1.0, 2.0]).unwrap();
        let c = Tensor::full(&[2], 1.0);
        assert_eq!(relu_vjp(&x, &c).unwrap().data(), &[0.0, 1.0]);
        let z = Tensor::new(&[1], vec![0.0]).unwrap();
        assert_eq!(
            relu_vjp(&z, &Tensor::full(&[1], 1.0)).unwrap().data(),
            &[0.0]
        );
    }

    #[test]
    fn softmax_sums_to_one_and_ones_cotangent_vanishes() {
        let p = softmax(&[1000.0, 999.0, -5.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| *v >= 0.0));
        let d = softmax_vjp(&p, &[1.0; 4]).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(softmax(&[2.0, 2.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn avgpool_rejects_odd() {
        assert!(avgpool2(&Tensor::zeros(&[3, 4, 1])).is_err());
        let x = Tensor::from_fn(&[2, 2, 1], |i| i as f64);
        assert_eq!(avgpool2(&x).unwrap().data(), &[1.5]);
    }

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(Tensor::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(&[0, 2], vec![]).is_err());
        assert!(Tensor::zeros(&[2]).add(&Tensor::zeros(&[3])).is_err());
    }
}
