use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::weights::{self, WeightFile, ARCH_REFERENCE_CNN};
use super::Classifier;
use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{self, Padding, Tensor};

/// One layer of a [`ClassifierSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerDesc {
    /// Convolution with per-output-channel bias.
    Conv2d {
        /// Kernel height.
        kh: usize,
        /// Kernel width.
        kw: usize,
        /// Input channels.
        cin: usize,
        /// Output channels.
        cout: usize,
        /// Border handling.
        padding: Padding,
    },
    /// Rectifier.
    Relu,
    /// 2×2 average pooling.
    AvgPool2,
    /// Fully connected layer over the flattened input.
    Dense {
        /// Input length.
        n_in: usize,
        /// Output length.
        n_out: usize,
    },
}

impl LayerDesc {
    fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerDesc::Conv2d {
                kh, kw, cin, cout, ..
            } => vec![vec![kh, kw, cin, cout], vec![cout]],
            LayerDesc::Dense { n_in, n_out } => vec![vec![n_out, n_in], vec![n_out]],
            LayerDesc::Relu | LayerDesc::AvgPool2 => Vec::new(),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerDesc::Conv2d { kh, kw, cin, .. } => kh * kw * cin,
            LayerDesc::Dense { n_in, .. } => n_in,
            _ => 1,
        }
    }
}

/// A feed-forward convolutional classifier: layer list plus parameters.
///
/// Parameters are stored per layer (kernel or weight tensor, then bias) in
/// layer order; [`ClassifierSpec::flat_weights`] concatenates them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierSpec {
    layers: Vec<LayerDesc>,
    params: Vec<Tensor>,
    num_classes: usize,
    input_shape: [usize; 3],
}

impl ClassifierSpec {
    /// The fixed reference architecture: conv 3×3 3→8, relu, pool, conv 3×3
    /// 8→16, relu, pool, dense to `num_classes`. Both convolutions replicate
    /// borders. `h` and `w` must be multiples of 4.
    pub fn reference_layers(h: usize, w: usize, num_classes: usize) -> Result<Vec<LayerDesc>> {
        if h == 0 || w == 0 || !h.is_multiple_of(4) || !w.is_multiple_of(4) {
            return Err(invalid(
                "reference CNN needs spatial extents divisible by 4",
            ));
        }
        if num_classes < 2 {
            return Err(invalid("at least two classes are required"));
        }
        let pad = Padding::SameReplicate;
        Ok(vec![
            LayerDesc::Conv2d {
                kh: 3,
                kw: 3,
                cin: 3,
                cout: 8,
                padding: pad,
            },
            LayerDesc::Relu,
            LayerDesc::AvgPool2,
            LayerDesc::Conv2d {
                kh: 3,
                kw: 3,
                cin: 8,
                cout: 16,
                padding: pad,
            },
            LayerDesc::Relu,
            LayerDesc::AvgPool2,
            LayerDesc::Dense {
                n_in: (h / 4) * (w / 4) * 16,
                n_out: num_classes,
            },
        ])
    }

    /// Number of parameters of a layer list.
    pub fn param_count_of(layers: &[LayerDesc]) -> usize {
        layers
            .iter()
            .flat_map(|l| l.param_shapes())
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// Reference CNN with He-uniform kernels and zero biases drawn from `seed`.
    pub fn init_reference(input_shape: [usize; 3], num_classes: usize, seed: u64) -> Result<Self> {
        if input_shape[2] != 3 {
            return Err(invalid("reference CNN expects 3 channels"));
        }
        let layers = Self::reference_layers(input_shape[0], input_shape[1], num_classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for l in &layers {
            let shapes = l.param_shapes();
            if shapes.is_empty() {
                continue;
            }
            let bound = libm::sqrt(6.0 / l.fan_in() as f64);
            params.push(Tensor::from_fn(&shapes[0], |_| {
                rng.gen_range(-bound..bound)
            }));
            params.push(Tensor::zeros(&shapes[1]));
        }
        Ok(Self {
            layers,
            params,
            num_classes,
            input_shape,
        })
    }

    /// Builds a model from a flat parameter buffer in layer order.
    pub fn from_flat(
        layers: Vec<LayerDesc>,
        input_shape: [usize; 3],
        num_classes: usize,
        flat: &[f64],
    ) -> Result<Self> {
        let expected = Self::param_count_of(&layers);
        if flat.len() != expected {
            return Err(Error::WeightFormat(alloc::format!(
                "parameter count {} does not match architecture ({expected})",
                flat.len()
            )));
        }
        let mut params = Vec::new();
        let mut at = 0;
        for shape in layers.iter().flat_map(|l| l.param_shapes()) {
            let n: usize = shape.iter().product();
            params.push(Tensor::new(&shape, flat[at..at + n].to_vec())?);
            at += n;
        }
        Ok(Self {
            layers,
            params,
            num_classes,
            input_shape,
        })
    }

    /// Layer list.
    pub fn layers(&self) -> &[LayerDesc] {
        &self.layers
    }

    /// Total parameter count.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Parameters concatenated in layer order.
    pub fn flat_weights(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.data().iter().copied())
            .collect()
    }

    /// Replaces all parameters from a flat buffer of the same length.
    pub fn set_flat_weights(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(shape_err(
                "set_flat_weights",
                &[self.param_count()],
                &[flat.len()],
            ));
        }
        let mut at = 0;
        for p in &mut self.params {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// `UNDW` encoding.
    pub fn save_weights(&self) -> Vec<u8> {
        weights::encode(
            ARCH_REFERENCE_CNN,
            self.num_classes as u32,
            &self.flat_weights(),
        )
    }

    /// Decodes an `UNDW` buffer holding a reference CNN.
    pub fn load_weights(bytes: &[u8]) -> Result<Self> {
        Self::from_weight_file(&weights::decode(bytes)?)
    }

    pub(crate) fn from_weight_file(file: &WeightFile) -> Result<Self> {
        if file.architecture != ARCH_REFERENCE_CNN {
            return Err(Error::WeightFormat(alloc::format!(
                "architecture {} is not the reference CNN",
                file.architecture
            )));
        }
        let n = file.num_classes as usize;
        // everything but the dense layer; dense input is (side/4)^2 * 16 for a square image
        const CONV_PARAMS: usize = 3 * 3 * 3 * 8 + 8 + 3 * 3 * 8 * 16 + 16;
        let conv = CONV_PARAMS;
        let rest = file.params.len().checked_sub(conv + n).ok_or_else(|| {
            Error::WeightFormat("parameter count too small for the reference CNN".into())
        })?;
        if n < 2 || rest % (16 * n) != 0 {
            return Err(Error::WeightFormat(
                "parameter count does not fit the reference CNN".into(),
            ));
        }
        let cells = rest / (16 * n);
        let side = libm::sqrt(cells as f64) as usize;
        if side * side != cells || side == 0 {
            return Err(Error::WeightFormat(
                "parameter count does not fit a square input".into(),
            ));
        }
        let hw = side * 4;
        let layers = Self::reference_layers(hw, hw, n)?;
        Self::from_flat(layers, [hw, hw, 3], n, &file.params)
    }

    /// Forward pass keeping every layer's input.
    fn forward_cached(&self, image: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        self.check_input(image)?;
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut x = image.clone();
        let mut p = 0;
        for layer in &self.layers {
            let next = match *layer {
                LayerDesc::Conv2d { padding, .. } => {
                    let mut y = tensor::conv2d(&x, &self.params[p], padding)?;
                    tensor::add_channel_bias(&mut y, self.params[p + 1].data())?;
                    p += 2;
                    y
                }
                LayerDesc::Relu => tensor::relu(&x),
                LayerDesc::AvgPool2 => tensor::avgpool2(&x)?,
                LayerDesc::Dense { .. } => {
                    let y = tensor::dense(&x, &self.params[p], &self.params[p + 1])?;
                    p += 2;
                    y
                }
            };
            acts.push(core::mem::replace(&mut x, next));
        }
        Ok((acts, x))
    }

    /// Reverse pass. Returns the input cotangent and, when asked, parameter
    /// cotangents in storage order.
    fn backward(
        &self,
        acts: &[Tensor],
        cot_logits: &[f64],
        want_params: bool,
    ) -> Result<(Tensor, Option<Vec<Tensor>>)> {
        let mut g = Tensor::new(&[cot_logits.len()], cot_logits.to_vec())?;
        let mut p = self.params.len();
        let mut grads: Vec<Tensor> = Vec::new();
        for (layer, x) in self.layers.iter().zip(acts).rev() {
            g = match *layer {
                LayerDesc::Conv2d { padding, .. } => {
                    p -= 2;
                    if want_params {
                        grads.push(Tensor::new(&[g.shape()[2]], tensor::channel_bias_vjp(&g)?)?);
                        grads.push(tensor::conv2d_vjp_kernels(
                            x,
                            self.params[p].shape(),
                            padding,
                            &g,
                        )?);
                    }
                    tensor::conv2d_vjp_input(x.shape(), &self.params[p], padding, &g)?
                }
                LayerDesc::Relu => tensor::relu_vjp(x, &g)?,
                LayerDesc::AvgPool2 => tensor::avgpool2_vjp(x.shape(), &g)?,
                LayerDesc::Dense { .. } => {
                    p -= 2;
                    let (dx, dw, db) = tensor::dense_vjp(x, &self.params[p], &g)?;
                    if want_params {
                        grads.push(db);
                        grads.push(dw);
                    }
                    dx
                }
            };
        }
        if want_params {
            grads.reverse();
            Ok((g, Some(grads)))
        } else {
            Ok((g, None))
        }
    }

    /// Forward pass, then the parameter gradient of `⟨logits, cot⟩` where `cot`
    /// is computed from the logits by the caller. Returns `(logits, gradient)`.
    pub fn logits_and_param_gradient(
        &self,
        image: &Tensor,
        cot_from_logits: impl FnOnce(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (acts, logits) = self.forward_cached(image)?;
        let cot = cot_from_logits(logits.data());
        self.check_cot(&cot)?;
        let (_, grads) = self.backward(&acts, &cot, true)?;
        let flat = grads
            .unwrap_or_default()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect();
        Ok((logits.into_data(), flat))
    }

    fn check_cot(&self, cot: &[f64]) -> Result<()> {
        if cot.len() != self.num_classes {
            return Err(shape_err(
                "logit cotangent",
                &[self.num_classes],
                &[cot.len()],
            ));
        }
        Ok(())
    }
}

impl Classifier for ClassifierSpec {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    fn logits(&self, image: &Tensor) -> Result<Vec<f64>> {
        self.check_input(image)?;
        let mut x = image.clone();
        let mut p = 0;
        for layer in &self.layers {
            x = match *layer {
                LayerDesc::Conv2d { padding, .. } => {
                    let mut y = tensor::conv2d(&x, &self.params[p], padding)?;
                    tensor::add_channel_bias(&mut y, self.params[p + 1].data())?;
                    p += 2;
                    y
                }
                LayerDesc::Relu => tensor::relu(&x),
                LayerDesc::AvgPool2 => tensor::avgpool2(&x)?,
                LayerDesc::Dense { .. } => {
                    let y = tensor::dense(&x, &self.params[p], &self.params[p + 1])?;
                    p += 2;
                    y
                }
            };
        }
        Ok(x.into_data())
    }

    fn input_gradient(&self, image: &Tensor, cot: &[f64]) -> Result<Tensor> {
        self.check_cot(cot)?;
        let (acts, _) = self.forward_cached(image)?;
        Ok(self.backward(&acts, cot, false)?.0)
    }
}
