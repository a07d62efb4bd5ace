//! Dense (height, width, channels) tensors and the convolution primitives used
//! by the entropy model.
//!
//! Storage is `f32`; every dot product accumulates in `f64` in a fixed order
//! (kernel row, kernel column, input channel) starting from the bias, so the
//! same inputs always give the same bits. Padding is zero "same" padding.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        check_dims(height, width, channels)?;
        Ok(Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        })
    }

    /// Builds a tensor from row-major (height, width, channels) data.
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width, channels)?;
        if data.len() != height * width * channels {
            return Err(Error::Config(format!(
                "tensor data has {} values, expected {height}x{width}x{channels} = {}",
                data.len(),
                height * width * channels
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("tensor value at flat index {i} is not finite")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        debug_assert!(row < self.height && col < self.width && ch < self.channels);
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[self.index(row, col, ch)]
    }

    /// Value at a signed position, zero outside the tensor.
    #[inline]
    pub fn get_padded(&self, row: isize, col: isize, ch: usize) -> f32 {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            0.0
        } else {
            self.get(row as usize, col as usize, ch)
        }
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f32) {
        let i = self.index(row, col, ch);
        self.data[i] = value;
    }

    /// All channel values at one spatial position.
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = self.index(row, col, 0);
        &self.data[start..start + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let start = self.index(row, col, 0);
        &mut self.data[start..start + self.channels]
    }

    /// True when every value is a whole number.
    pub fn is_integral(&self) -> bool {
        self.data.iter().all(|v| v.fract() == 0.0)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Tensor> {
        Tensor::from_vec(self.height, self.width, self.channels, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Concatenates along the channel axis; spatial dims must agree.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("nothing to concatenate".into()))?;
        let (h, w) = (first.height, first.width);
        if let Some(p) = parts.iter().find(|p| p.height != h || p.width != w) {
            return Err(Error::Config(format!(
                "cannot concatenate {}x{} with {h}x{w}",
                p.height, p.width
            )));
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for r in 0..h {
            for c in 0..w {
                for p in parts {
                    data.extend_from_slice(p.pixel(r, c));
                }
            }
        }
        Tensor::from_vec(h, w, channels, data)
    }
}

fn check_dims(height: usize, width: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::Config(format!(
            "tensor dims must be positive, got {height}x{width}x{channels}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    None,
    LeakyRelu(f32),
}

impl Activation {
    pub const DEFAULT_LEAKY_SLOPE: f32 = 0.01;

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::None => x,
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope as f64 * x
                }
            }
        }
    }
}

/// A 2-D convolution (or transposed convolution) layer.
///
/// `weights` is laid out as (kernel_h, kernel_w, in_channels, out_channels),
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
        activation: Activation,
    ) -> Result<Self> {
        let layer = Self {
            kernel_h,
            kernel_w,
            in_channels,
            out_channels,
            stride,
            weights,
            bias,
            activation,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("conv layer dims must be positive".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("conv stride must be at least 1".into()));
        }
        let expected = self.kernel_h * self.kernel_w * self.in_channels * self.out_channels;
        if self.weights.len() != expected {
            return Err(Error::Config(format!(
                "conv weights have {} values, expected {}x{}x{}x{} = {expected}",
                self.weights.len(),
                self.kernel_h,
                self.kernel_w,
                self.in_channels,
                self.out_channels
            )));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::Config(format!(
                "conv bias has {} values, expected {}",
                self.bias.len(),
                self.out_channels
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::Config("conv parameters must be finite".into()));
        }
        if let Activation::LeakyRelu(s) = self.activation {
            if !s.is_finite() {
                return Err(Error::Config("leaky relu slope must be finite".into()));
            }
        }
        Ok(())
    }

    #[inline]
    fn weight_row(&self, kr: usize, kc: usize, ic: usize) -> &[f32] {
        let start = ((kr * self.kernel_w + kc) * self.in_channels + ic) * self.out_channels;
        &self.weights[start..start + self.out_channels]
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.channels() != self.in_channels {
            return Err(Error::Config(format!(
                "layer expects {} input channels, got {}",
                self.in_channels,
                input.channels()
            )));
        }
        Ok(())
    }

    /// Applies a 1x1 layer to a single feature vector.
    ///
    /// Bit-identical to the same position of [`conv2d`] on a full tensor.
    pub fn apply_vector(&self, input: &[f32]) -> Result<Vec<f32>> {
        if self.kernel_h != 1 || self.kernel_w != 1 {
            return Err(Error::Config("apply_vector needs a 1x1 layer".into()));
        }
        if input.len() != self.in_channels {
            return Err(Error::Config(format!(
                "layer expects {} input channels, got {}",
                self.in_channels,
                input.len()
            )));
        }
        let mut acc = self.bias_acc();
        for (ic, &x) in input.iter().enumerate() {
            accumulate(&mut acc, x, self.weight_row(0, 0, ic));
        }
        finish(&acc, self.activation)
    }

    fn bias_acc(&self) -> Vec<f64> {
        self.bias.iter().map(|&b| b as f64).collect()
    }

    /// The layer with input and output roles swapped (kernel transposed per tap).
    ///
    /// `transposed_conv2d` with the swapped layer is the adjoint of `conv2d`
    /// with the original one (bias aside).
    pub fn swapped(&self) -> ConvLayer {
        let mut weights = vec![0.0; self.weights.len()];
        for kr in 0..self.kernel_h {
            for kc in 0..self.kernel_w {
                for ic in 0..self.in_channels {
                    for oc in 0..self.out_channels {
                        let src = ((kr * self.kernel_w + kc) * self.in_channels + ic) * self.out_channels + oc;
                        let dst = ((kr * self.kernel_w + kc) * self.out_channels + oc) * self.in_channels + ic;
                        weights[dst] = self.weights[src];
                    }
                }
            }
        }
        ConvLayer {
            kernel_h: self.kernel_h,
            kernel_w: self.kernel_w,
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            stride: self.stride,
            weights,
            bias: vec![0.0; self.in_channels],
            activation: Activation::None,
        }
    }
}

#[inline]
fn accumulate(acc: &mut [f64], x: f32, w: &[f32]) {
    let x = x as f64;
    for (a, &wv) in acc.iter_mut().zip(w) {
        *a += x * wv as f64;
    }
}

fn finish(acc: &[f64], activation: Activation) -> Result<Vec<f32>> {
    let out: Vec<f32> = acc.iter().map(|&a| activation.apply(a) as f32).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("layer produced non-finite values".into()));
    }
    Ok(out)
}

/// Leading padding of a "same" convolution along one axis.
fn same_pad_before(input: usize, kernel: usize, stride: usize) -> usize {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    total / 2
}

/// Strided convolution with zero "same" padding: output dims are
/// `ceil(input / stride)`, padding split with the smaller half first.
pub fn conv2d(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    layer.check_input(input)?;
    let (h, w, _) = input.dims();
    let s = layer.stride;
    let (oh, ow) = (h.div_ceil(s), w.div_ceil(s));
    let pad_r = same_pad_before(h, layer.kernel_h, s) as isize;
    let pad_c = same_pad_before(w, layer.kernel_w, s) as isize;

    let mut data = Vec::with_capacity(oh * ow * layer.out_channels);
    for orow in 0..oh {
        for ocol in 0..ow {
            let mut acc = layer.bias_acc();
            for kr in 0..layer.kernel_h {
                let r = (orow * s + kr) as isize - pad_r;
                if r < 0 || r as usize >= h {
                    continue;
                }
                for kc in 0..layer.kernel_w {
                    let c = (ocol * s + kc) as isize - pad_c;
                    if c < 0 || c as usize >= w {
                        continue;
                    }
                    let px = input.pixel(r as usize, c as usize);
                    for (ic, &x) in px.iter().enumerate() {
                        accumulate(&mut acc, x, layer.weight_row(kr, kc, ic));
                    }
                }
            }
            data.extend(finish(&acc, layer.activation)?);
        }
    }
    Tensor::from_vec(oh, ow, layer.out_channels, data)
}

/// Transposed convolution: output dims are `input * stride`, and (bias aside)
/// this is the adjoint of [`conv2d`] applied to an input of the output's size.
pub fn transposed_conv2d(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    layer.check_input(input)?;
    let (h, w, _) = input.dims();
    let s = layer.stride;
    let (oh, ow) = (h * s, w * s);
    let pad_r = same_pad_before(oh, layer.kernel_h, s);
    let pad_c = same_pad_before(ow, layer.kernel_w, s);

    let mut data = Vec::with_capacity(oh * ow * layer.out_channels);
    for orow in 0..oh {
        for ocol in 0..ow {
            let mut acc = layer.bias_acc();
            for kr in 0..layer.kernel_h {
                // orow = irow * s + kr - pad_r
                let t = orow + pad_r;
                if t < kr || !(t - kr).is_multiple_of(s) || (t - kr) / s >= h {
                    continue;
                }
                let irow = (t - kr) / s;
                for kc in 0..layer.kernel_w {
                    let t = ocol + pad_c;
                    if t < kc || !(t - kc).is_multiple_of(s) || (t - kc) / s >= w {
                        continue;
                    }
                    let icol = (t - kc) / s;
                    let px = input.pixel(irow, icol);
                    for (ic, &x) in px.iter().enumerate() {
                        accumulate(&mut acc, x, layer.weight_row(kr, kc, ic));
                    }
                }
            }
            data.extend(finish(&acc, layer.activation)?);
        }
    }
    Tensor::from_vec(oh, ow, layer.out_channels, data)
}

/// A square, stride-1 convolution whose kernel is zeroed at and after the
/// center tap in raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedConvLayer {
    base: ConvLayer,
    mask: Vec<bool>,
    /// Unmasked (row, col) taps in raster order.
    taps: Vec<(usize, usize)>,
}

impl MaskedConvLayer {
    pub const SUPPORTED_KERNELS: [usize; 3] = [3, 5, 7];

    pub fn new(base: ConvLayer) -> Result<Self> {
        base.validate()?;
        let k = base.kernel_h;
        if k != base.kernel_w {
            return Err(Error::Config(format!(
                "masked conv kernel must be square, got {}x{}",
                base.kernel_h, base.kernel_w
            )));
        }
        if k.is_multiple_of(2) {
            return Err(Error::Config(format!("masked conv kernel size must be odd, got {k}")));
        }
        if !Self::SUPPORTED_KERNELS.contains(&k) {
            return Err(Error::Config(format!("masked conv kernel size must be 3, 5 or 7, got {k}")));
        }
        if base.stride != 1 {
            return Err(Error::Config("masked conv must have stride 1".into()));
        }
        let center = k / 2;
        let mask: Vec<bool> = (0..k * k)
            .map(|i| {
                let (r, c) = (i / k, i % k);
                r < center || (r == center && c < center)
            })
            .collect();
        let taps = (0..k * k).filter(|&i| mask[i]).map(|i| (i / k, i % k)).collect();
        Ok(Self { base, mask, taps })
    }

    pub fn base(&self) -> &ConvLayer {
        &self.base
    }

    pub fn kernel_size(&self) -> usize {
        self.base.kernel_h
    }

    pub fn in_channels(&self) -> usize {
        self.base.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.base.out_channels
    }

    /// Binary mask in raster order over the kernel's spatial footprint.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Evaluates the layer at one output position of `src`.
    ///
    /// Only taps strictly before `(row, col)` in raster order are read; taps
    /// outside `src` read as zero. Writes `out_channels` values into `out`.
    pub(crate) fn eval_at(&self, src: &Tensor, row: usize, col: usize, out: &mut [f32]) -> Result<()> {
        let half = (self.kernel_size() / 2) as isize;
        let mut acc = self.base.bias_acc();
        for &(kr, kc) in &self.taps {
            let r = row as isize + kr as isize - half;
            let c = col as isize + kc as isize - half;
            for ic in 0..self.base.in_channels {
                accumulate(&mut acc, src.get_padded(r, c, ic), self.base.weight_row(kr, kc, ic));
            }
        }
        let vals = finish(&acc, self.base.activation)?;
        out.copy_from_slice(&vals);
        Ok(())
    }
}

/// Causal masked convolution over a full tensor.
pub fn masked_conv2d(input: &Tensor, layer: &MaskedConvLayer) -> Result<Tensor> {
    layer.base.check_input(input)?;
    let (h, w, _) = input.dims();
    let mut out = Tensor::zeros(h, w, layer.out_channels())?;
    let mut buf = vec![0.0f32; layer.out_channels()];
    for r in 0..h {
        for c in 0..w {
            layer.eval_at(input, r, c, &mut buf)?;
            out.pixel_mut(r, c).copy_from_slice(&buf);
        }
    }
    Ok(out)
}
