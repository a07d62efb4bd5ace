//! MS-SSIM, its dB form, and PSNR on unit-range images.

use std::path::Path;

use crate::{Error, Result};

/// Smallest side that keeps an 11-tap window valid at the fifth scale.
pub const MIN_MS_SSIM_SIDE: usize = 176;
pub const SCALES: usize = 5;
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Interleaved samples in `[0, 1]`, row-major `(h, w, channels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    channels: usize,
    samples: Vec<f64>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, channels: usize, samples: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Argument("image dims must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Argument(format!("images have 1 or 3 channels, got {channels}")));
        }
        if samples.len() != height * width * channels {
            return Err(Error::Argument(format!(
                "{} samples for a {height}x{width}x{channels} image",
                samples.len()
            )));
        }
        if samples.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Argument("image samples must be finite and in [0, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            samples,
        })
    }

    /// Reads an 8-bit PGM (1 channel) or PPM (3 channels).
    pub fn read_pnm(path: &Path) -> Result<Self> {
        let img = image::ImageReader::open(path)?
            .with_guessed_format()?
            .decode()
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (channels, raw) = if img.color().has_color() {
            (3, img.to_rgb8().into_raw())
        } else {
            (1, img.to_luma8().into_raw())
        };
        Self::new(h, w, channels, raw.into_iter().map(|v| v as f64 / 255.0).collect())
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

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    fn channel(&self, ch: usize) -> Plane {
        Plane {
            h: self.height,
            w: self.width,
            v: self.samples.iter().skip(ch).step_by(self.channels).copied().collect(),
        }
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if (self.height, self.width, self.channels) != (other.height, other.width, other.channels) {
            return Err(Error::Argument(format!(
                "image dims differ: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        Ok(())
    }
}

/// Per-scale exponents. Normalized by their sum before use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsSsimWeights([f64; SCALES]);

impl MsSsimWeights {
    pub const DEFAULT: MsSsimWeights = MsSsimWeights([0.0448, 0.2856, 0.3001, 0.2363, 0.1333]);
    pub const AVERAGE: MsSsimWeights = MsSsimWeights([1.0; SCALES]);

    pub fn new(w: [f64; SCALES]) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().all(|&v| v == 0.0) {
            return Err(Error::Argument(format!(
                "MS-SSIM weights must be non-negative with one positive, got {w:?}"
            )));
        }
        Ok(Self(w))
    }

    pub fn values(&self) -> [f64; SCALES] {
        self.0
    }

    fn normalized(&self) -> [f64; SCALES] {
        let s: f64 = self.0.iter().sum();
        self.0.map(|v| v / s)
    }
}

#[derive(Debug, Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn mul(&self, o: &Plane) -> Plane {
        Plane {
            h: self.h,
            w: self.w,
            v: self.v.iter().zip(&o.v).map(|(a, b)| a * b).collect(),
        }
    }

    /// 2x2 mean pooling; odd trailing rows/columns are dropped.
    fn downsample(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut v = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let at = |dr: usize, dc: usize| self.v[(2 * r + dr) * self.w + 2 * c + dc];
                v.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0);
            }
        }
        Plane { h, w, v }
    }

    /// Separable Gaussian filter, valid region only.
    fn filter(&self, g: &[f64; WINDOW]) -> Plane {
        let ow = self.w - WINDOW + 1;
        let oh = self.h - WINDOW + 1;
        let mut tmp = vec![0.0; self.h * ow];
        for r in 0..self.h {
            let row = &self.v[r * self.w..(r + 1) * self.w];
            for c in 0..ow {
                tmp[r * ow + c] = g.iter().zip(&row[c..c + WINDOW]).map(|(a, b)| a * b).sum();
            }
        }
        let mut v = vec![0.0; oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                v[r * ow + c] = g.iter().enumerate().map(|(i, k)| k * tmp[(r + i) * ow + c]).sum();
            }
        }
        Plane { h: oh, w: ow, v }
    }
}

fn gaussian_window() -> [f64; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let mut g = [0.0; WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Mean luminance and contrast-structure terms at one scale.
fn ssim_terms(x: &Plane, y: &Plane, g: &[f64; WINDOW]) -> (f64, f64) {
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mx = x.filter(g);
    let my = y.filter(g);
    let sxx = x.mul(x).filter(g);
    let syy = y.mul(y).filter(g);
    let sxy = x.mul(y).filter(g);
    let n = mx.v.len() as f64;
    let (mut l, mut cs) = (0.0, 0.0);
    for i in 0..mx.v.len() {
        let (a, b) = (mx.v[i], my.v[i]);
        let vx = sxx.v[i] - a * a;
        let vy = syy.v[i] - b * b;
        let cov = sxy.v[i] - a * b;
        l += (2.0 * a * b + c1) / (a * a + b * b + c1);
        cs += (2.0 * cov + c2) / (vx + vy + c2);
    }
    (l / n, cs / n)
}

fn ms_ssim_plane(mut x: Plane, mut y: Plane, weights: &[f64; SCALES]) -> f64 {
    let g = gaussian_window();
    let mut out = 1.0;
    for (scale, &w) in weights.iter().enumerate() {
        let (l, cs) = ssim_terms(&x, &y, &g);
        let term = if scale == SCALES - 1 { l * cs } else { cs };
        out *= term.max(0.0).powf(w);
        if scale + 1 < SCALES {
            x = x.downsample();
            y = y.downsample();
        }
    }
    out
}

/// Multi-scale SSIM, averaged over channels.
pub fn ms_ssim(a: &ImagePlane, b: &ImagePlane, weights: &MsSsimWeights) -> Result<f64> {
    a.same_shape(b)?;
    if a.height < MIN_MS_SSIM_SIDE || a.width < MIN_MS_SSIM_SIDE {
        return Err(Error::Argument(format!(
            "MS-SSIM needs both sides >= {MIN_MS_SSIM_SIDE}, got {}x{}",
            a.height, a.width
        )));
    }
    let w = weights.normalized();
    let total: f64 = (0..a.channels)
        .map(|ch| ms_ssim_plane(a.channel(ch), b.channel(ch), &w))
        .sum();
    Ok(total / a.channels as f64)
}

/// `-10 log10(1 - v)`.
pub fn ms_ssim_db(v: f64) -> Result<f64> {
    if !v.is_finite() || v >= 1.0 {
        return Err(Error::Argument(format!("MS-SSIM {v} has no finite dB value")));
    }
    Ok(-10.0 * (1.0 - v).log10())
}

/// PSNR for unit-range samples; `f64::INFINITY` for identical images.
pub fn psnr(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    a.same_shape(b)?;
    let mse = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.samples.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}
