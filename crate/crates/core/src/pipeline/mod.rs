//! End-to-end coding of a latent pair `(y, z)`.
//!
//! `z` is coded first with the static factorized prior in channel-major
//! raster order. The hyper decoder turns it into a feature map with the same
//! spatial size as `y`; then `y` is coded position by position, each position's
//! Gaussian parameters coming from the context model (over already coded
//! positions) and the hyper features, channels inner, all-zero channels skipped.

mod container;
mod format;
mod synth;

pub use container::{BitstreamContainer, CONTAINER_MAGIC};
pub use format::{
    load_tensor, load_weights, save_tensor, save_weights, tensor_from_bytes, tensor_to_bytes, weights_from_bytes,
    weights_to_bytes, DType, TENSOR_MAGIC, WEIGHTS_FORMAT_VERSION, WEIGHTS_MAGIC,
};
pub use synth::{gen_synthetic_model, SynthConfig};

use crate::context::ContextModel;
use crate::entropy::{gaussian_pmf, rate_estimate_factorized, Alphabet, EntropyParametersNet, FactorizedPmf};
use crate::range_coder::{selective_decode, selective_encode, ChannelFlags, RangeDecoder, RangeEncoder, SymbolModel};
use crate::tensor::{conv2d, transposed_conv2d, ConvLayer, Tensor};
use crate::{Error, Result};

/// Latent channel counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub c_y: usize,
    pub c_z: usize,
}

/// One stage of the hyper decoder.
#[derive(Debug, Clone, PartialEq)]
pub enum HyperLayer {
    Conv(ConvLayer),
    Transposed(ConvLayer),
}

impl HyperLayer {
    pub fn layer(&self) -> &ConvLayer {
        match self {
            HyperLayer::Conv(l) | HyperLayer::Transposed(l) => l,
        }
    }

    fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        match self {
            HyperLayer::Conv(l) => (h.div_ceil(l.stride), w.div_ceil(l.stride)),
            HyperLayer::Transposed(l) => (h * l.stride, w * l.stride),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            HyperLayer::Conv(l) => conv2d(x, l),
            HyperLayer::Transposed(l) => transposed_conv2d(x, l),
        }
    }
}

/// Every learned parameter of the entropy model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    dims: ModelDims,
    context: ContextModel,
    entropy_net: EntropyParametersNet,
    hyper_decoder: Vec<HyperLayer>,
    z_pmf: FactorizedPmf,
}

impl ModelWeights {
    pub fn new(
        dims: ModelDims,
        context: ContextModel,
        entropy_net: EntropyParametersNet,
        hyper_decoder: Vec<HyperLayer>,
        z_pmf: FactorizedPmf,
    ) -> Result<Self> {
        if context.in_channels() != dims.c_y {
            return Err(Error::Config(format!(
                "context model reads {} channels, c_y is {}",
                context.in_channels(),
                dims.c_y
            )));
        }
        if entropy_net.latent_channels() != dims.c_y {
            return Err(Error::Config(format!(
                "entropy net predicts {} channels, c_y is {}",
                entropy_net.latent_channels(),
                dims.c_y
            )));
        }
        if entropy_net.input_channels() <= context.out_channels() {
            return Err(Error::Config(format!(
                "entropy net input ({}) leaves no room for hyper features after {} context channels",
                entropy_net.input_channels(),
                context.out_channels()
            )));
        }
        let hyper_slice = entropy_net.input_channels() - context.out_channels();
        let mut channels = dims.c_z;
        for (i, layer) in hyper_decoder.iter().enumerate() {
            let l = layer.layer();
            l.validate()?;
            if l.in_channels != channels {
                return Err(Error::Config(format!(
                    "hyper layer {i} expects {} channels, receives {channels}",
                    l.in_channels
                )));
            }
            channels = l.out_channels;
        }
        if channels != hyper_slice {
            return Err(Error::Config(format!(
                "hyper decoder outputs {channels} channels, entropy net expects {hyper_slice}"
            )));
        }
        if z_pmf.channels() != dims.c_z {
            return Err(Error::Config(format!(
                "factorized prior has {} channels, c_z is {}",
                z_pmf.channels(),
                dims.c_z
            )));
        }
        Ok(Self {
            dims,
            context,
            entropy_net,
            hyper_decoder,
            z_pmf,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn context(&self) -> &ContextModel {
        &self.context
    }

    pub fn entropy_net(&self) -> &EntropyParametersNet {
        &self.entropy_net
    }

    pub fn hyper_decoder(&self) -> &[HyperLayer] {
        &self.hyper_decoder
    }

    pub fn z_pmf(&self) -> &FactorizedPmf {
        &self.z_pmf
    }

    /// Spatial size of the hyper features for a `h_z x w_z` hyper latent.
    pub fn hyper_output_size(&self, h_z: usize, w_z: usize) -> (usize, usize) {
        self.hyper_decoder
            .iter()
            .fold((h_z, w_z), |(h, w), l| l.output_size(h, w))
    }
}

/// Runs the hyper decoder on `z`.
pub fn hyper_forward(z: &Tensor, weights: &ModelWeights) -> Result<Tensor> {
    if z.channels() != weights.dims.c_z {
        return Err(Error::Config(format!(
            "hyper latent has {} channels, model expects {}",
            z.channels(),
            weights.dims.c_z
        )));
    }
    let mut x = z.clone();
    for layer in &weights.hyper_decoder {
        x = layer.forward(&x)?;
    }
    Ok(x)
}

/// Which context computation drives serial coding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecodePath {
    /// 7x7xc window per position.
    #[default]
    Cropped,
    /// Full-tensor masked convolutions recomputed at every position.
    Reference,
}

struct PositionModel<'a> {
    weights: &'a ModelWeights,
    hyper: &'a Tensor,
    path: DecodePath,
}

impl SymbolModel for PositionModel<'_> {
    fn params_at(&mut self, latents: &Tensor, row: usize, col: usize) -> Result<(Vec<f32>, Vec<f32>)> {
        let ctx = match self.path {
            DecodePath::Cropped => self.weights.context.context_at(latents, row, col)?,
            DecodePath::Reference => self.weights.context.context_full(latents)?.pixel(row, col).to_vec(),
        };
        self.weights.entropy_net.predict_at(&ctx, self.hyper.pixel(row, col))
    }
}

fn check_integral(t: &Tensor, name: &str) -> Result<()> {
    if !t.is_integral() {
        return Err(Error::Argument(format!("{name} must be integer-valued")));
    }
    Ok(())
}

fn hyper_for(y_dims: (usize, usize), z: &Tensor, weights: &ModelWeights) -> Result<Tensor> {
    let psi = hyper_forward(z, weights)?;
    if (psi.height(), psi.width()) != y_dims {
        return Err(Error::Config(format!(
            "hyper decoder maps {}x{} to {}x{}, latent grid is {}x{}",
            z.height(),
            z.width(),
            psi.height(),
            psi.width(),
            y_dims.0,
            y_dims.1
        )));
    }
    Ok(psi)
}

/// Encoder output plus the bookkeeping needed for rate reports.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub container: BitstreamContainer,
    pub y_symbols: usize,
    /// Ideal bits of the coded `y` symbols under their quantized tables.
    pub y_quantized_bits: f64,
    /// Ideal bits of `z` under the quantized factorized tables.
    pub z_quantized_bits: f64,
}

fn encode_z(z: &Tensor, pmf: &FactorizedPmf) -> Result<(Vec<u8>, f64)> {
    let mut enc = RangeEncoder::new();
    let mut bits = 0.0;
    for ch in 0..z.channels() {
        let cdf = pmf.cdf(ch);
        for r in 0..z.height() {
            for c in 0..z.width() {
                let s = z.get(r, c, ch) as i32;
                enc.encode(s, cdf)?;
                bits += cdf.bits(s).unwrap_or(0.0);
            }
        }
    }
    Ok((enc.finish()?, bits))
}

fn decode_z(bytes: &[u8], dims: (usize, usize, usize), pmf: &FactorizedPmf) -> Result<Tensor> {
    let (h, w, c) = dims;
    let mut z = Tensor::zeros(h, w, c)?;
    let mut dec = RangeDecoder::new(bytes)?;
    for ch in 0..c {
        let cdf = pmf.cdf(ch);
        for r in 0..h {
            for col in 0..w {
                z.set(r, col, ch, dec.decode(cdf)? as f32);
            }
        }
    }
    dec.finish()?;
    Ok(z)
}

/// Encodes `(y, z)` with the cropped context path.
pub fn encode_image_latents(y: &Tensor, z: &Tensor, weights: &ModelWeights) -> Result<BitstreamContainer> {
    Ok(encode_detailed(y, z, weights, DecodePath::Cropped)?.container)
}

pub fn encode_detailed(y: &Tensor, z: &Tensor, weights: &ModelWeights, path: DecodePath) -> Result<Encoded> {
    let dims = weights.dims;
    if y.channels() != dims.c_y || z.channels() != dims.c_z {
        return Err(Error::Config(format!(
            "latents have {}/{} channels, model expects {}/{}",
            y.channels(),
            z.channels(),
            dims.c_y,
            dims.c_z
        )));
    }
    check_integral(y, "y")?;
    check_integral(z, "z")?;
    let (z_bytes, z_quantized_bits) = encode_z(z, &weights.z_pmf)?;
    let psi = hyper_for((y.height(), y.width()), z, weights)?;
    let alphabet = Alphabet::from_latents(y)?;
    let flags = ChannelFlags::compute(y);
    let mut model = PositionModel {
        weights,
        hyper: &psi,
        path,
    };
    let payload = selective_encode(y, &mut model, &flags, alphabet)?;
    Ok(Encoded {
        container: BitstreamContainer {
            y_dims: y.dims(),
            z_dims: z.dims(),
            alphabet,
            flags,
            z_bytes,
            y_bytes: payload.bytes,
        },
        y_symbols: payload.symbols,
        y_quantized_bits: payload.quantized_bits,
        z_quantized_bits,
    })
}

/// Decodes `(y, z)` with the cropped context path.
pub fn decode_image_latents(container: &BitstreamContainer, weights: &ModelWeights) -> Result<(Tensor, Tensor)> {
    decode_with(container, weights, DecodePath::Cropped)
}

pub fn decode_with(
    container: &BitstreamContainer,
    weights: &ModelWeights,
    path: DecodePath,
) -> Result<(Tensor, Tensor)> {
    let dims = weights.dims;
    if container.y_dims.2 != dims.c_y || container.z_dims.2 != dims.c_z {
        return Err(Error::Config(format!(
            "stream has {}/{} channels, model expects {}/{}",
            container.y_dims.2, container.z_dims.2, dims.c_y, dims.c_z
        )));
    }
    let z = decode_z(&container.z_bytes, container.z_dims, &weights.z_pmf)?;
    let psi = hyper_for((container.y_dims.0, container.y_dims.1), &z, weights)?;
    let mut model = PositionModel {
        weights,
        hyper: &psi,
        path,
    };
    let y = selective_decode(
        &container.y_bytes,
        &container.flags,
        container.y_dims,
        &mut model,
        container.alphabet,
    )?;
    if ChannelFlags::compute(&y) != container.flags {
        return Err(Error::Coding("decoded channels disagree with the channel flags".into()));
    }
    Ok((y, z))
}

/// Eq.-2 style bit estimates under the continuous (unquantized) models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitEstimate {
    /// `sum -log2 p(y | z)` over the symbols the selective codec actually codes.
    pub bits_y: f64,
    /// `sum -log2 p(z)`.
    pub bits_z: f64,
}

/// Rate estimate without running the coder, using the full-tensor paths.
pub fn estimate_bits(y: &Tensor, z: &Tensor, weights: &ModelWeights) -> Result<BitEstimate> {
    if y.channels() != weights.dims.c_y {
        return Err(Error::Config(format!(
            "y has {} channels, model expects {}",
            y.channels(),
            weights.dims.c_y
        )));
    }
    check_integral(y, "y")?;
    check_integral(z, "z")?;
    let bits_z = rate_estimate_factorized(z, &weights.z_pmf)?;
    let psi = hyper_for((y.height(), y.width()), z, weights)?;
    let ctx = weights.context.context_full(y)?;
    let params = weights.entropy_net.predict_params(&ctx, &psi)?;
    let flags = ChannelFlags::compute(y);
    let c = y.channels();
    let mut bits_y = 0.0;
    for (i, &v) in y.data().iter().enumerate() {
        if flags.get(i % c) {
            bits_y -= gaussian_pmf(v as i32, params.mu.data()[i] as f64, params.sigma.data()[i] as f64).log2();
        }
    }
    Ok(BitEstimate { bits_y, bits_z })
}

/// Rates of one coded latent pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub bits_y_estimate: f64,
    pub bits_z_estimate: f64,
    pub bits_y_quantized: f64,
    pub bits_z_quantized: f64,
    pub bytes_actual_total: usize,
    /// Fixed header fields, including both substream length words.
    pub bytes_header: usize,
    pub bytes_flags: usize,
    pub bytes_z: usize,
    pub bytes_y: usize,
    /// Bits per pixel of the source image, when its size is known.
    pub bpp: Option<f64>,
}

impl RateReport {
    pub fn from_encoded(enc: &Encoded, estimate: BitEstimate, pixel_dims: Option<(usize, usize)>) -> Self {
        let c = &enc.container;
        let total = c.byte_len();
        let (bytes_flags, bytes_z, bytes_y) = (c.flags.to_bytes().len(), c.z_bytes.len(), c.y_bytes.len());
        Self {
            bits_y_estimate: estimate.bits_y,
            bits_z_estimate: estimate.bits_z,
            bits_y_quantized: enc.y_quantized_bits,
            bits_z_quantized: enc.z_quantized_bits,
            bytes_actual_total: total,
            bytes_header: total - bytes_flags - bytes_z - bytes_y,
            bytes_flags,
            bytes_z,
            bytes_y,
            bpp: pixel_dims.map(|(w, h)| bits_per_pixel(total, w, h)),
        }
    }
}

/// `8 * bytes / (width * height)`.
pub fn bits_per_pixel(bytes: usize, width: usize, height: usize) -> f64 {
    8.0 * bytes as f64 / (width as f64 * height as f64)
}

/// Encodes `(y, z)` and reports estimated and actual rates.
pub fn estimate_rates(
    y: &Tensor,
    z: &Tensor,
    weights: &ModelWeights,
    pixel_dims: Option<(usize, usize)>,
) -> Result<RateReport> {
    let estimate = estimate_bits(y, z, weights)?;
    let enc = encode_detailed(y, z, weights, DecodePath::Cropped)?;
    Ok(RateReport::from_encoded(&enc, estimate, pixel_dims))
}
