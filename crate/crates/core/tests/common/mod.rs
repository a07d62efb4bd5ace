#![allow(dead_code)]

use mscaec::pipeline::{gen_synthetic_model, ModelWeights, SynthConfig};
use mscaec::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn small_config(c_y: usize, c_z: usize, hyper_upsample: usize) -> SynthConfig {
    SynthConfig {
        c_y,
        c_z,
        ctx_each: Some(c_y.clamp(2, 8)),
        hyper_upsample,
        hidden: Some(vec![2 * c_y]),
        z_half_range: 6,
    }
}

pub fn small_model(seed: u64, c_y: usize, c_z: usize, hyper_upsample: usize) -> ModelWeights {
    gen_synthetic_model(seed, &small_config(c_y, c_z, hyper_upsample)).unwrap()
}

/// Integer latents with some all-zero channels and scattered zeros elsewhere.
pub fn random_latents(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, zero_channel_p: f64, amp: i32) -> Tensor {
    let mut y = Tensor::zeros(h, w, c).unwrap();
    let zero_p = rng.random_range(0.0..0.8);
    for ch in 0..c {
        if rng.random_bool(zero_channel_p) {
            continue;
        }
        for r in 0..h {
            for col in 0..w {
                if !rng.random_bool(zero_p) {
                    y.set(r, col, ch, rng.random_range(-amp..=amp) as f32);
                }
            }
        }
    }
    y
}

pub fn random_hyper(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, amp: i32) -> Tensor {
    let data = (0..h * w * c).map(|_| rng.random_range(-amp..=amp) as f32).collect();
    Tensor::from_vec(h, w, c, data).unwrap()
}
