//! Lossless entropy codec for quantized latent tensors.
//!
//! The codec models each latent symbol with a discretized Gaussian whose
//! parameters come from two sources: a multi-scale autoregressive context
//! model (three parallel masked convolutions of size 3, 5 and 7) and a
//! hyperprior side channel decoded from a second, smaller tensor. Symbols
//! are range coded against 16-bit quantized CDFs; channels that are entirely
//! zero are flagged and skipped.
//!
//! Module map:
//!
//! * [`tensor`]: dense tensors and the convolution primitives.
//! * [`context`]: the multi-scale context model and its cropped fast path.
//! * [`entropy`]: Gaussian PMFs, the parameter network, CDF quantization, rate estimates.
//! * [`range_coder`]: the range coder and the selective (zero-channel skipping) wrapper.
//! * [`pipeline`]: model weights, file formats, container layout, encode/decode.
//! * [`metrics`]: MS-SSIM, MS-SSIM in dB and PSNR.
//! * [`allocator`]: multiple-choice knapsack bit allocation.
//! * [`cli`]: the `mscaec` command-line front end.

pub mod allocator;
pub mod cli;
pub mod context;
pub mod entropy;
mod error;
pub mod metrics;
pub mod pipeline;
pub mod range_coder;
pub mod tensor;

pub use error::{Error, Result};
