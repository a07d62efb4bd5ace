//! Range coding over 16-bit quantized CDFs, and the selective codec that
//! skips all-zero latent channels.
//!
//! The coder keeps a 64-bit `low` and a range in `[2^56, 2^64)`, emitting one
//! byte per renormalization. Carries are propagated back into the bytes already
//! written, so no range is ever thrown away: a message of `R` ideal bits (under
//! the quantized tables) encodes to between `ceil(R / 8)` and `R / 8 + 1`
//! bytes, the last byte being the flush.

use crate::entropy::{Alphabet, QuantizedCdf, CDF_PRECISION_BITS};
use crate::tensor::Tensor;
use crate::{Error, Result};

const RENORM_THRESHOLD: u64 = 1 << 56;
/// Bytes the decoder may read past the end of a stream (implicit zero padding).
const DECODER_LOOKAHEAD: usize = 7;

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u64::MAX,
            out: Vec::new(),
        }
    }

    /// Bytes emitted so far (excluding the pending flush).
    pub fn bytes_written(&self) -> usize {
        self.out.len()
    }

    pub fn encode(&mut self, symbol: i32, cdf: &QuantizedCdf) -> Result<()> {
        let (start, width) = cdf.interval(symbol).ok_or_else(|| {
            Error::Coding(format!(
                "symbol {symbol} outside alphabet [{}, {}]",
                cdf.q_min(),
                cdf.q_max()
            ))
        })?;
        self.encode_interval(start, width)
    }

    fn encode_interval(&mut self, start: u32, width: u32) -> Result<()> {
        let r = self.range >> CDF_PRECISION_BITS;
        let (low, carry) = self.low.overflowing_add(r * start as u64);
        self.low = low;
        if carry {
            self.propagate_carry()?;
        }
        self.range = r * width as u64;
        while self.range < RENORM_THRESHOLD {
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
        Ok(())
    }

    fn propagate_carry(&mut self) -> Result<()> {
        for byte in self.out.iter_mut().rev() {
            if *byte == 0xFF {
                *byte = 0;
            } else {
                *byte += 1;
                return Ok(());
            }
        }
        Err(Error::Internal("range coder carry ran past the first byte".into()))
    }

    /// Flushes a single byte: the shortest value inside the final interval.
    pub fn finish(mut self) -> Result<Vec<u8>> {
        let mask = RENORM_THRESHOLD - 1;
        if self.low & mask != 0 {
            let (v, carry) = (self.low | mask).overflowing_add(1);
            self.low = v;
            if carry {
                self.propagate_carry()?;
            }
        }
        self.out.push((self.low >> 56) as u8);
        Ok(self.out)
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    buf: &'a [u8],
    pos: usize,
    /// Offset of the code value above the current interval's low end.
    code: u64,
    range: u64,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(buf: &'a [u8]) -> Result<Self> {
        if buf.is_empty() {
            return Err(Error::Coding("empty range coded stream".into()));
        }
        let mut dec = Self {
            buf,
            pos: 0,
            code: 0,
            range: u64::MAX,
        };
        for _ in 0..8 {
            dec.code = (dec.code << 8) | dec.next_byte()? as u64;
        }
        Ok(dec)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = match self.buf.get(self.pos) {
            Some(&b) => b,
            None if self.pos < self.buf.len() + DECODER_LOOKAHEAD => 0,
            None => return Err(Error::Coding("range coded stream exhausted".into())),
        };
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, cdf: &QuantizedCdf) -> Result<i32> {
        let r = self.range >> CDF_PRECISION_BITS;
        let target = (self.code / r).min((1 << CDF_PRECISION_BITS) - 1) as u32;
        let symbol = cdf.symbol_for(target);
        let (start, width) = cdf.interval(symbol).expect("symbol_for stays in the alphabet");
        self.code -= r * start as u64;
        self.range = r * width as u64;
        if self.code >= self.range {
            return Err(Error::Coding("corrupt range coded stream".into()));
        }
        while self.range < RENORM_THRESHOLD {
            self.code = (self.code << 8) | self.next_byte()? as u64;
            self.range <<= 8;
        }
        Ok(symbol)
    }

    /// Checks that exactly the whole stream was consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() + DECODER_LOOKAHEAD {
            return Err(Error::Coding(format!(
                "stream of {} bytes does not match the decoded symbols",
                self.buf.len()
            )));
        }
        Ok(())
    }
}

/// One bit per latent channel: set when the channel holds any non-zero value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelFlags {
    bits: Vec<bool>,
}

impl ChannelFlags {
    /// Flags computed from content: `flag[i] = sum(|y[:, :, i]|) > 0`.
    pub fn compute(latents: &Tensor) -> Self {
        let c = latents.channels();
        let mut bits = vec![false; c];
        for (i, &v) in latents.data().iter().enumerate() {
            if v != 0.0 {
                bits[i % c] = true;
            }
        }
        Self { bits }
    }

    /// Every channel flagged, i.e. plain non-selective coding.
    pub fn all(channels: usize) -> Self {
        Self {
            bits: vec![true; channels],
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, channel: usize) -> bool {
        self.bits[channel]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Serialized size, `ceil(c / 8)`.
    pub fn byte_len(channels: usize) -> usize {
        channels.div_ceil(8)
    }

    /// Packs flag `i` into bit `i % 8` (LSB first) of byte `i / 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; Self::byte_len(self.bits.len())];
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], channels: usize) -> Result<Self> {
        if bytes.len() != Self::byte_len(channels) {
            return Err(Error::Parse(format!(
                "flags need {} bytes for {channels} channels, got {}",
                Self::byte_len(channels),
                bytes.len()
            )));
        }
        let bits: Vec<bool> = (0..channels).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
        for i in channels..bytes.len() * 8 {
            if bytes[i / 8] >> (i % 8) & 1 == 1 {
                return Err(Error::Parse(format!("padding flag bit {i} is set")));
            }
        }
        Ok(Self { bits })
    }
}

/// Supplies Gaussian parameters position by position during serial coding.
pub trait SymbolModel {
    /// `(mu, sigma)` for every channel at `(row, col)`. Positions of `latents`
    /// before `(row, col)` in raster order are final; later ones are zero.
    fn params_at(&mut self, latents: &Tensor, row: usize, col: usize) -> Result<(Vec<f32>, Vec<f32>)>;
}

/// Output of [`selective_encode`].
#[derive(Debug, Clone)]
pub struct CodedPayload {
    pub bytes: Vec<u8>,
    /// Symbols passed to the range coder.
    pub symbols: usize,
    /// Ideal code length of those symbols under the quantized tables.
    pub quantized_bits: f64,
}

/// Codes `latents` in (row, column, channel) order, skipping channels whose flag is clear.
///
/// A cleared flag on a channel with non-zero content is an internal error.
pub fn selective_encode(
    latents: &Tensor,
    model: &mut dyn SymbolModel,
    flags: &ChannelFlags,
    alphabet: Alphabet,
) -> Result<CodedPayload> {
    let (h, w, c) = latents.dims();
    if flags.len() != c {
        return Err(Error::Config(format!("{} flags for {c} channels", flags.len())));
    }
    let content = ChannelFlags::compute(latents);
    if let Some(ch) = (0..c).find(|&ch| content.get(ch) && !flags.get(ch)) {
        return Err(Error::Internal(format!("channel {ch} is flagged empty but has content")));
    }
    let mut enc = RangeEncoder::new();
    let mut symbols = 0;
    let mut quantized_bits = 0.0;
    for row in 0..h {
        for col in 0..w {
            let (mu, sigma) = model.params_at(latents, row, col)?;
            for ch in (0..c).filter(|&ch| flags.get(ch)) {
                let cdf = alphabet.cdf(mu[ch] as f64, sigma[ch] as f64)?;
                let symbol = latents.get(row, col, ch) as i32;
                enc.encode(symbol, &cdf)?;
                quantized_bits += cdf.bits(symbol).unwrap_or(0.0);
                symbols += 1;
            }
        }
    }
    Ok(CodedPayload {
        bytes: enc.finish()?,
        symbols,
        quantized_bits,
    })
}

/// Inverse of [`selective_encode`]; skipped channels come back as zeros.
pub fn selective_decode(
    payload: &[u8],
    flags: &ChannelFlags,
    dims: (usize, usize, usize),
    model: &mut dyn SymbolModel,
    alphabet: Alphabet,
) -> Result<Tensor> {
    let (h, w, c) = dims;
    if flags.len() != c {
        return Err(Error::Config(format!("{} flags for {c} channels", flags.len())));
    }
    let mut latents = Tensor::zeros(h, w, c)?;
    let mut dec = RangeDecoder::new(payload)?;
    for row in 0..h {
        for col in 0..w {
            let (mu, sigma) = model.params_at(&latents, row, col)?;
            for ch in (0..c).filter(|&ch| flags.get(ch)) {
                let cdf = alphabet.cdf(mu[ch] as f64, sigma[ch] as f64)?;
                let symbol = dec.decode(&cdf)?;
                latents.set(row, col, ch, symbol as f32);
            }
        }
    }
    dec.finish()?;
    Ok(latents)
}
