//! Probability models for the latent symbols.
//!
//! Each symbol of the main latent tensor is modeled as a Gaussian convolved
//! with a unit-width uniform, i.e. the normal mass on `[s - 1/2, s + 1/2]`.
//! The hyper latent uses a static per-channel histogram. Both are turned into
//! 16-bit [`QuantizedCdf`] tables for the range coder.

use crate::tensor::{conv2d, ConvLayer, Tensor};
use crate::{Error, Result};

pub const SIGMA_MIN: f32 = 0.04;
pub const SIGMA_MAX: f32 = 256.0;
pub const CDF_PRECISION_BITS: u32 = 16;
pub const CDF_TOTAL: u32 = 1 << CDF_PRECISION_BITS;

// Evaluated through libm so tables are identical on every platform.
#[inline]
fn lower_tail(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

#[inline]
fn upper_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal mass on `[lo, hi]` (either bound may be infinite),
/// evaluated on whichever tail keeps precision.
fn normal_mass(lo: f64, hi: f64) -> f64 {
    let m = if lo >= 0.0 {
        upper_tail(lo) - upper_tail(hi)
    } else if hi <= 0.0 {
        lower_tail(hi) - lower_tail(lo)
    } else {
        1.0 - lower_tail(lo) - upper_tail(hi)
    };
    m.max(0.0)
}

/// Probability of integer `symbol` under N(mu, sigma^2) convolved with U(-1/2, 1/2).
pub fn gaussian_pmf(symbol: i32, mu: f64, sigma: f64) -> f64 {
    let s = symbol as f64;
    normal_mass((s - 0.5 - mu) / sigma, (s + 0.5 - mu) / sigma)
}

/// Gaussian parameter maps for a latent tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mu: Tensor,
    pub sigma: Tensor,
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// Maps a raw network output to a scale: softplus, then clamp.
#[inline]
pub fn sigma_from_raw(raw: f32) -> f32 {
    (softplus(raw as f64) as f32).clamp(SIGMA_MIN, SIGMA_MAX)
}

/// Stack of 1x1 convolutions mapping `[context | hyper]` features to
/// `[mu | raw sigma]`, `c` channels each.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyParametersNet {
    layers: Vec<ConvLayer>,
}

impl EntropyParametersNet {
    pub fn new(layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("entropy parameter net needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            layer.validate()?;
            if layer.kernel_h != 1 || layer.kernel_w != 1 || layer.stride != 1 {
                return Err(Error::Config(format!("entropy layer {i} must be 1x1 with stride 1")));
            }
            if i > 0 && layers[i - 1].out_channels != layer.in_channels {
                return Err(Error::Config(format!(
                    "entropy layer {i} expects {} inputs, previous layer gives {}",
                    layer.in_channels,
                    layers[i - 1].out_channels
                )));
            }
        }
        let out = layers.last().unwrap().out_channels;
        if !out.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "entropy net must output 2c channels, got {out}"
            )));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    /// Latent channel count `c` (half the output width).
    pub fn latent_channels(&self) -> usize {
        self.layers.last().unwrap().out_channels / 2
    }

    /// Parameters for one position. Bit-identical to the same position of
    /// [`EntropyParametersNet::predict_params`].
    pub fn predict_at(&self, ctx: &[f32], hyper: &[f32]) -> Result<(Vec<f32>, Vec<f32>)> {
        if ctx.len() + hyper.len() != self.input_channels() {
            return Err(Error::Config(format!(
                "entropy net expects {} inputs, got {} context + {} hyper",
                self.input_channels(),
                ctx.len(),
                hyper.len()
            )));
        }
        let mut x: Vec<f32> = ctx.iter().chain(hyper).copied().collect();
        for layer in &self.layers {
            x = layer.apply_vector(&x)?;
        }
        let c = self.latent_channels();
        let sigma = x[c..].iter().map(|&r| sigma_from_raw(r)).collect();
        x.truncate(c);
        Ok((x, sigma))
    }

    /// Parameters for every position of the feature maps.
    pub fn predict_params(&self, ctx: &Tensor, hyper: &Tensor) -> Result<GaussianParams> {
        let mut x = Tensor::concat_channels(&[ctx, hyper])?;
        if x.channels() != self.input_channels() {
            return Err(Error::Config(format!(
                "entropy net expects {} inputs, got {} context + {} hyper",
                self.input_channels(),
                ctx.channels(),
                hyper.channels()
            )));
        }
        for layer in &self.layers {
            x = conv2d(&x, layer)?;
        }
        let c = self.latent_channels();
        let (h, w, _) = x.dims();
        let mut mu = Vec::with_capacity(h * w * c);
        let mut sigma = Vec::with_capacity(h * w * c);
        for px in x.data().chunks(2 * c) {
            mu.extend_from_slice(&px[..c]);
            sigma.extend(px[c..].iter().map(|&r| sigma_from_raw(r)));
        }
        Ok(GaussianParams {
            mu: Tensor::from_vec(h, w, c, mu)?,
            sigma: Tensor::from_vec(h, w, c, sigma)?,
        })
    }
}

/// Integer cumulative-frequency table over `[q_min, q_max]` with total `2^16`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedCdf {
    q_min: i32,
    cumulative: Vec<u32>,
}

impl QuantizedCdf {
    /// Wraps a cumulative table, checking it starts at 0, ends at the total and
    /// strictly increases.
    pub fn from_cumulative(q_min: i32, cumulative: Vec<u32>) -> Result<Self> {
        if cumulative.len() < 2 {
            return Err(Error::Argument("cdf needs at least one symbol".into()));
        }
        if cumulative[0] != 0 || *cumulative.last().unwrap() != CDF_TOTAL {
            return Err(Error::Argument("cdf must run from 0 to 2^16".into()));
        }
        if cumulative.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Argument("cdf must be strictly increasing".into()));
        }
        Ok(Self { q_min, cumulative })
    }

    pub fn q_min(&self) -> i32 {
        self.q_min
    }

    pub fn q_max(&self) -> i32 {
        self.q_min + self.alphabet_len() as i32 - 1
    }

    pub fn alphabet_len(&self) -> usize {
        self.cumulative.len() - 1
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cumulative
    }

    /// `(start, width)` of `symbol`'s interval, or `None` outside the alphabet.
    #[inline]
    pub fn interval(&self, symbol: i32) -> Option<(u32, u32)> {
        let i = symbol.checked_sub(self.q_min)?;
        if i < 0 || i as usize >= self.alphabet_len() {
            return None;
        }
        let i = i as usize;
        Some((self.cumulative[i], self.cumulative[i + 1] - self.cumulative[i]))
    }

    /// Symbol whose interval contains `target` (`target < 2^16`).
    #[inline]
    pub fn symbol_for(&self, target: u32) -> i32 {
        // Largest i with cumulative[i] <= target.
        let i = self.cumulative.partition_point(|&c| c <= target) - 1;
        self.q_min + i.min(self.alphabet_len() - 1) as i32
    }

    /// Ideal code length of `symbol` under the quantized table.
    pub fn bits(&self, symbol: i32) -> Option<f64> {
        self.interval(symbol)
            .map(|(_, w)| CDF_PRECISION_BITS as f64 - (w as f64).log2())
    }
}

/// Quantizes a probability vector to integer frequencies summing to 2^16.
///
/// Each mass is rounded to the nearest multiple of 2^-16, zero counts are
/// raised to one, and the total is repaired on the largest entry (the first
/// of equal maxima). An excess the largest entry cannot absorb while keeping
/// width one moves on to the next largest.
pub fn quantize_masses(q_min: i32, masses: &[f64]) -> Result<QuantizedCdf> {
    let n = masses.len();
    if n == 0 {
        return Err(Error::Argument("empty alphabet".into()));
    }
    if n > CDF_TOTAL as usize {
        return Err(Error::Argument(format!(
            "alphabet of {n} symbols exceeds the 2^16 cdf precision"
        )));
    }
    if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(Error::Argument("masses must be finite and non-negative".into()));
    }
    let sum: f64 = masses.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Argument("masses sum to zero".into()));
    }
    let mut freq: Vec<i64> = masses
        .iter()
        .map(|&m| ((m / sum) * CDF_TOTAL as f64).round().max(1.0) as i64)
        .collect();
    let mut excess: i64 = freq.iter().sum::<i64>() - CDF_TOTAL as i64;
    if excess < 0 {
        let i = argmax(&freq);
        freq[i] -= excess;
        excess = 0;
    }
    while excess > 0 {
        let i = argmax(&freq);
        let take = excess.min(freq[i] - 1);
        if take == 0 {
            // Unreachable while n <= CDF_TOTAL: some entry always exceeds one.
            return Err(Error::Internal("cannot repair cdf total".into()));
        }
        freq[i] -= take;
        excess -= take;
    }
    let mut cumulative = Vec::with_capacity(n + 1);
    let mut acc = 0u32;
    cumulative.push(0);
    for f in freq {
        acc += f as u32;
        cumulative.push(acc);
    }
    Ok(QuantizedCdf { q_min, cumulative })
}

fn argmax(v: &[i64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Gaussian masses over `[q_min, q_max]` with the tails folded into the edge symbols.
pub fn gaussian_masses(mu: f64, sigma: f64, q_min: i32, q_max: i32) -> Result<Vec<f64>> {
    if q_min > q_max {
        return Err(Error::Argument(format!("empty alphabet [{q_min}, {q_max}]")));
    }
    if !mu.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::Argument(format!("invalid gaussian parameters mu={mu} sigma={sigma}")));
    }
    let n = (q_max as i64 - q_min as i64 + 1) as usize;
    if n > CDF_TOTAL as usize {
        return Err(Error::Argument(format!(
            "alphabet of {n} symbols exceeds the 2^16 cdf precision"
        )));
    }
    // Boundaries between consecutive symbols, standardized.
    let bound = |k: usize| (q_min as f64 + k as f64 - 0.5 - mu) / sigma;
    let masses = (0..n)
        .map(|k| {
            let lo = if k == 0 { f64::NEG_INFINITY } else { bound(k) };
            let hi = if k + 1 == n { f64::INFINITY } else { bound(k + 1) };
            normal_mass(lo, hi)
        })
        .collect();
    Ok(masses)
}

/// Quantized CDF of the discretized Gaussian over `[q_min, q_max]`.
pub fn build_cdf(mu: f64, sigma: f64, q_min: i32, q_max: i32) -> Result<QuantizedCdf> {
    let masses = gaussian_masses(mu, sigma, q_min, q_max)?;
    quantize_masses(q_min, &masses)
}

/// Symbol range of the main latent tensor, `[min(y) - 1, max(y) + 1]` by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alphabet {
    pub min: i32,
    pub max: i32,
}

impl Alphabet {
    pub fn new(min: i32, max: i32) -> Result<Self> {
        if min > max {
            return Err(Error::Argument(format!("empty alphabet [{min}, {max}]")));
        }
        let len = max as i64 - min as i64 + 1;
        if len > CDF_TOTAL as i64 {
            return Err(Error::Argument(format!(
                "alphabet [{min}, {max}] has {len} symbols, more than the 2^16 cdf precision allows"
            )));
        }
        Ok(Self { min, max })
    }

    /// `[min - 1, max + 1]` over an integer-valued tensor.
    pub fn from_latents(latents: &Tensor) -> Result<Self> {
        if !latents.is_integral() {
            return Err(Error::Argument("latents must be integer-valued".into()));
        }
        let lo = latents.data().iter().copied().fold(f32::INFINITY, f32::min) as i64 - 1;
        let hi = latents.data().iter().copied().fold(f32::NEG_INFINITY, f32::max) as i64 + 1;
        if lo < i32::MIN as i64 || hi > i32::MAX as i64 {
            return Err(Error::Argument("latent values exceed the 32-bit symbol range".into()));
        }
        Self::new(lo as i32, hi as i32)
    }

    pub fn len(&self) -> usize {
        (self.max as i64 - self.min as i64 + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, symbol: i32) -> bool {
        (self.min..=self.max).contains(&symbol)
    }

    pub fn cdf(&self, mu: f64, sigma: f64) -> Result<QuantizedCdf> {
        build_cdf(mu, sigma, self.min, self.max)
    }
}

/// Bits of `latents` under the Gaussian model: `sum -log2 pmf(y | mu, sigma)`.
pub fn rate_estimate(latents: &Tensor, params: &GaussianParams) -> Result<f64> {
    if latents.dims() != params.mu.dims() || latents.dims() != params.sigma.dims() {
        return Err(Error::Config("latent and parameter shapes differ".into()));
    }
    Ok(latents
        .data()
        .iter()
        .zip(params.mu.data().iter().zip(params.sigma.data()))
        .map(|(&y, (&m, &s))| -gaussian_pmf(y as i32, m as f64, s as f64).log2())
        .sum())
}

/// Static per-channel histogram prior over `[z_min, z_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedPmf {
    z_min: i32,
    z_max: i32,
    /// Raw positive histogram weights, one row per channel.
    counts: Vec<Vec<f32>>,
    masses: Vec<Vec<f64>>,
    cdfs: Vec<QuantizedCdf>,
}

impl FactorizedPmf {
    pub fn new(z_min: i32, z_max: i32, counts: Vec<Vec<f32>>) -> Result<Self> {
        if z_min > z_max {
            return Err(Error::Config(format!("empty hyper alphabet [{z_min}, {z_max}]")));
        }
        if counts.is_empty() {
            return Err(Error::Config("factorized prior needs at least one channel".into()));
        }
        let n = (z_max as i64 - z_min as i64 + 1) as usize;
        let mut masses = Vec::with_capacity(counts.len());
        let mut cdfs = Vec::with_capacity(counts.len());
        for (ch, row) in counts.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Config(format!(
                    "factorized prior channel {ch} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if row.iter().any(|&v| !v.is_finite() || v <= 0.0) {
                return Err(Error::Config(format!(
                    "factorized prior channel {ch} has a non-positive entry"
                )));
            }
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            let m: Vec<f64> = row.iter().map(|&v| v as f64 / sum).collect();
            cdfs.push(quantize_masses(z_min, &m)?);
            masses.push(m);
        }
        Ok(Self {
            z_min,
            z_max,
            counts,
            masses,
            cdfs,
        })
    }

    pub fn z_min(&self) -> i32 {
        self.z_min
    }

    pub fn z_max(&self) -> i32 {
        self.z_max
    }

    pub fn channels(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<f32>] {
        &self.counts
    }

    /// Normalized probability of `symbol` in `channel`, `None` outside the alphabet.
    pub fn prob(&self, channel: usize, symbol: i32) -> Option<f64> {
        if symbol < self.z_min || symbol > self.z_max {
            return None;
        }
        self.masses.get(channel).map(|m| m[(symbol - self.z_min) as usize])
    }

    pub fn cdf(&self, channel: usize) -> &QuantizedCdf {
        &self.cdfs[channel]
    }
}

/// Bits of the hyper latent under the factorized prior.
pub fn rate_estimate_factorized(z: &Tensor, pmf: &FactorizedPmf) -> Result<f64> {
    if z.channels() != pmf.channels() {
        return Err(Error::Config(format!(
            "hyper latent has {} channels, prior has {}",
            z.channels(),
            pmf.channels()
        )));
    }
    let mut bits = 0.0;
    for (i, &v) in z.data().iter().enumerate() {
        let ch = i % z.channels();
        let p = pmf.prob(ch, v as i32).ok_or_else(|| {
            Error::Coding(format!(
                "hyper symbol {v} outside [{}, {}] in channel {ch}",
                pmf.z_min, pmf.z_max
            ))
        })?;
        bits -= p.log2();
    }
    Ok(bits)
}
