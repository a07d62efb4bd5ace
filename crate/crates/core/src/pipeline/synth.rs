//! Seeded pseudo-random models for exercising the codec without training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{HyperLayer, ModelDims, ModelWeights};
use crate::context::ContextModel;
use crate::entropy::{EntropyParametersNet, FactorizedPmf};
use crate::tensor::{Activation, ConvLayer, MaskedConvLayer};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub c_y: usize,
    pub c_z: usize,
    /// Output width of each context branch; `None` means `2 * c_y`.
    pub ctx_each: Option<usize>,
    /// Number of stride-2 transposed convolutions in the hyper decoder.
    pub hyper_upsample: usize,
    /// Hidden widths of the entropy net; `None` means `[4 * c_y, 3 * c_y]`.
    pub hidden: Option<Vec<usize>>,
    /// Hyper alphabet is `[-z_half_range, z_half_range]`.
    pub z_half_range: i32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            c_y: 128,
            c_z: 192,
            ctx_each: None,
            hyper_upsample: 2,
            hidden: None,
            z_half_range: 8,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, a: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-a..=a)).collect()
}

fn layer(rng: &mut ChaCha8Rng, k: usize, cin: usize, cout: usize, stride: usize, scale: f32, act: Activation) -> Result<ConvLayer> {
    let a = scale / ((k * k * cin) as f32).sqrt();
    let weights = uniform(rng, k * k * cin * cout, a);
    let bias = uniform(rng, cout, 0.1);
    ConvLayer::new(k, k, cin, cout, stride, weights, bias, act)
}

/// Deterministic model for `seed`. Scale outputs sit near `softplus([0, 1.5])`,
/// roughly 0.7 to 1.7, so coded rates stay moderate for small integer latents.
pub fn gen_synthetic_model(seed: u64, cfg: &SynthConfig) -> Result<ModelWeights> {
    if cfg.c_y == 0 || cfg.c_z == 0 || cfg.z_half_range < 0 {
        return Err(Error::Config(format!("invalid synthetic model config {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = cfg.c_y;
    let leaky = Activation::LeakyRelu(Activation::DEFAULT_LEAKY_SLOPE);
    let each = cfg.ctx_each.unwrap_or(2 * c);

    let branch = |rng: &mut ChaCha8Rng, k: usize| -> Result<MaskedConvLayer> {
        MaskedConvLayer::new(layer(rng, k, c, each, 1, 1.0, Activation::None)?)
    };
    let l3 = branch(&mut rng, 3)?;
    let l5 = branch(&mut rng, 5)?;
    let l7 = branch(&mut rng, 7)?;
    let context = ContextModel::new(l3, l5, l7)?;

    let mut hyper = Vec::new();
    let mut ch = cfg.c_z;
    for _ in 0..cfg.hyper_upsample {
        hyper.push(HyperLayer::Transposed(layer(&mut rng, 5, ch, c, 2, 1.0, leaky)?));
        ch = c;
    }
    hyper.push(HyperLayer::Conv(layer(&mut rng, 3, ch, 2 * c, 1, 1.0, Activation::None)?));

    let hidden = cfg.hidden.clone().unwrap_or_else(|| vec![4 * c, 3 * c]);
    let mut widths = vec![3 * each + 2 * c];
    widths.extend(hidden);
    let mut entropy = Vec::new();
    for pair in widths.windows(2) {
        entropy.push(layer(&mut rng, 1, pair[0], pair[1], 1, 1.0, leaky)?);
    }
    let mut last = layer(&mut rng, 1, *widths.last().unwrap(), 2 * c, 1, 0.1, Activation::None)?;
    for (i, b) in last.bias.iter_mut().enumerate() {
        *b = if i < c {
            rng.random_range(-0.5f32..=0.5)
        } else {
            rng.random_range(0.0f32..=1.5)
        };
    }
    entropy.push(last);
    let entropy_net = EntropyParametersNet::new(entropy)?;

    let r = cfg.z_half_range;
    let counts = (0..cfg.c_z)
        .map(|_| {
            let b = rng.random_range(0.5f64..3.0);
            (-r..=r).map(|k| ((-(k.abs() as f64) / b).exp() + 1e-4) as f32).collect()
        })
        .collect();
    let z_pmf = FactorizedPmf::new(-r, r, counts)?;

    ModelWeights::new(ModelDims { c_y: c, c_z: cfg.c_z }, context, entropy_net, hyper, z_pmf)
}
