//! Multi-scale autoregressive context model.
//!
//! Three masked convolutions (3x3, 5x5, 7x7) run in parallel over the latent
//! tensor and their outputs are concatenated in that order. Points in the
//! innermost ring around the current position are seen by all three kernels,
//! the second ring by the 5x5 and 7x7 kernels, the third ring by the 7x7 only.
//!
//! During serial decoding only a 7x7xc window around the current position can
//! influence its features, so [`ContextModel::context_at`] crops that window
//! instead of convolving the whole tensor. Both paths share the per-tap
//! accumulation order and agree bit for bit.

use crate::tensor::{masked_conv2d, MaskedConvLayer, Tensor};
use crate::{Error, Result};

/// Side of the square window that covers the largest kernel's receptive field.
pub const CROP_SIZE: usize = 7;
const CROP_CENTER: usize = CROP_SIZE / 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ContextModel {
    layer3: MaskedConvLayer,
    layer5: MaskedConvLayer,
    layer7: MaskedConvLayer,
}

impl ContextModel {
    pub fn new(layer3: MaskedConvLayer, layer5: MaskedConvLayer, layer7: MaskedConvLayer) -> Result<Self> {
        for (layer, k) in [(&layer3, 3), (&layer5, 5), (&layer7, 7)] {
            if layer.kernel_size() != k {
                return Err(Error::Config(format!(
                    "context branch expects a {k}x{k} kernel, got {0}x{0}",
                    layer.kernel_size()
                )));
            }
        }
        let c = layer3.in_channels();
        if layer5.in_channels() != c || layer7.in_channels() != c {
            return Err(Error::Config("context branches must share the latent channel count".into()));
        }
        let each = layer3.out_channels();
        if layer5.out_channels() != each || layer7.out_channels() != each {
            return Err(Error::Config("context branches must have equal output widths".into()));
        }
        Ok(Self { layer3, layer5, layer7 })
    }

    pub fn layers(&self) -> [&MaskedConvLayer; 3] {
        [&self.layer3, &self.layer5, &self.layer7]
    }

    /// Latent channel count `c`.
    pub fn in_channels(&self) -> usize {
        self.layer3.in_channels()
    }

    pub fn out_channels_each(&self) -> usize {
        self.layer3.out_channels()
    }

    /// Width of the concatenated feature vector.
    pub fn out_channels(&self) -> usize {
        3 * self.out_channels_each()
    }

    fn check_channels(&self, latents: &Tensor) -> Result<()> {
        if latents.channels() != self.in_channels() {
            return Err(Error::Config(format!(
                "context model expects {} latent channels, got {}",
                self.in_channels(),
                latents.channels()
            )));
        }
        Ok(())
    }

    /// Context features for every position of `latents`.
    pub fn context_full(&self, latents: &Tensor) -> Result<Tensor> {
        self.check_channels(latents)?;
        let branches = [
            masked_conv2d(latents, &self.layer3)?,
            masked_conv2d(latents, &self.layer5)?,
            masked_conv2d(latents, &self.layer7)?,
        ];
        Tensor::concat_channels(&[&branches[0], &branches[1], &branches[2]])
    }

    /// Context features at a single position, computed from the cropped
    /// 7x7xc causal window around it.
    ///
    /// Only positions strictly before `(row, col)` in raster order are read.
    pub fn context_at(&self, latents: &Tensor, row: usize, col: usize) -> Result<Vec<f32>> {
        self.check_channels(latents)?;
        let (h, w, _) = latents.dims();
        if row >= h || col >= w {
            return Err(Error::Argument(format!(
                "position ({row}, {col}) outside {h}x{w} latent grid"
            )));
        }
        let window = causal_window(latents, row, col)?;
        let each = self.out_channels_each();
        let mut out = vec![0.0f32; 3 * each];
        for (i, layer) in self.layers().into_iter().enumerate() {
            layer.eval_at(&window, CROP_CENTER, CROP_CENTER, &mut out[i * each..(i + 1) * each])?;
        }
        Ok(out)
    }
}

/// Copies the 7x7xc neighborhood of `(row, col)` into a fresh tensor.
/// Cells outside the latent grid or at/after the center in raster order stay zero.
fn causal_window(latents: &Tensor, row: usize, col: usize) -> Result<Tensor> {
    let c = latents.channels();
    let mut window = Tensor::zeros(CROP_SIZE, CROP_SIZE, c)?;
    for wr in 0..=CROP_CENTER {
        let r = row as isize + wr as isize - CROP_CENTER as isize;
        if r < 0 {
            continue;
        }
        let cols = if wr == CROP_CENTER { CROP_CENTER } else { CROP_SIZE };
        for wc in 0..cols {
            let cc = col as isize + wc as isize - CROP_CENTER as isize;
            if cc < 0 || cc as usize >= latents.width() {
                continue;
            }
            window
                .pixel_mut(wr, wc)
                .copy_from_slice(latents.pixel(r as usize, cc as usize));
        }
    }
    Ok(window)
}
