//! Canonical image representation and elementary amplitude/geometry
//! transforms.
//!
//! Every transform here is a pure function returning a new [`Image`]; inputs
//! are never mutated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};

/// Declared nominal amplitude range of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeHint {
    /// `[0, 1]`
    Unit,
    /// `[0, 255]`, 8-bit sources.
    Byte,
    /// `[0, 65535]`, 16-bit sources.
    Word,
    /// No declared range (raw model outputs, raw tensors).
    Unspecified,
}

impl RangeHint {
    pub fn max_value(self) -> Option<f64> {
        match self {
            RangeHint::Unit => Some(1.0),
            RangeHint::Byte => Some(255.0),
            RangeHint::Word => Some(65535.0),
            RangeHint::Unspecified => None,
        }
    }
}

/// Row-major, channel-fastest grid of finite real intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
    range_hint: RangeHint,
}

impl Image {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
        range_hint: RangeHint,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("empty dimensions {width}x{height}")));
        }
        if channels == 0 {
            return Err(Error::InvalidImage("zero channels".into()));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::InvalidImage("dimension overflow".into()))?;
        if data.len() != expected {
            return Err(Error::InvalidImage(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!("non-finite intensity at index {i}")));
        }
        Ok(Image { width, height, channels, data, range_hint })
    }

    /// Single-channel image from a generator closure `f(row, col)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        range_hint: RangeHint,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Image::new(width, height, 1, data, range_hint)
    }

    pub fn filled(width: usize, height: usize, value: f64, range_hint: RangeHint) -> Result<Self> {
        Image::new(width, height, 1, vec![value; width * height], range_hint)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn range_hint(&self) -> RangeHint {
        self.range_hint
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn with_range_hint(mut self, range_hint: RangeHint) -> Self {
        self.range_hint = range_hint;
        self
    }

    /// Applies `f` to every intensity. Fails if `f` produces a non-finite value.
    pub fn map(&self, range_hint: RangeHint, f: impl Fn(f64) -> f64) -> Result<Image> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Image::new(self.width, self.height, self.channels, data, range_hint)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Rounds every intensity to the nearest `f32`, the precision of the
    /// raw-tensor format.
    pub fn to_f32_precision(&self) -> Image {
        Image {
            data: self.data.iter().map(|&v| v as f32 as f64).collect(),
            ..self.clone()
        }
    }

    /// Circular shift: output(r, c) = input(r - dy, c - dx) with wrap-around.
    pub fn roll(&self, dy: isize, dx: isize) -> Image {
        let (w, h, ch) = (self.width as isize, self.height as isize, self.channels);
        let mut data = vec![0.0; self.data.len()];
        for r in 0..h {
            let sr = (r - dy).rem_euclid(h) as usize;
            for c in 0..w {
                let sc = (c - dx).rem_euclid(w) as usize;
                let dst = (r as usize * self.width + c as usize) * ch;
                let src = (sr * self.width + sc) * ch;
                data[dst..dst + ch].copy_from_slice(&self.data[src..src + ch]);
            }
        }
        Image { data, ..self.clone() }
    }

    /// Extracts the `width`×`height` block whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, width: usize, height: usize) -> Result<Image> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {width}x{height}@({row},{col}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let ch = self.channels;
        let mut data = Vec::with_capacity(width * height * ch);
        for r in row..row + height {
            let start = (r * self.width + col) * ch;
            data.extend_from_slice(&self.data[start..start + width * ch]);
        }
        Image::new(width, height, ch, data, self.range_hint)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Photometric {
    #[serde(rename = "MONOCHROME1")]
    Monochrome1,
    #[serde(rename = "MONOCHROME2")]
    Monochrome2,
    #[default]
    #[serde(rename = "UNSPECIFIED")]
    Unspecified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Laterality {
    #[serde(rename = "LEFT")]
    Left,
    #[serde(rename = "RIGHT")]
    Right,
    #[default]
    #[serde(rename = "UNSPECIFIED")]
    Unspecified,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ImageMeta {
    pub photometric: Photometric,
    pub laterality: Laterality,
    pub source_id: String,
}

/// Affine map of intensities onto `[0, 1]`.
///
/// A constant image maps to all zeros and returns [`Warning::ConstantImage`].
pub fn normalize_minmax(img: &Image) -> (Image, Option<Warning>) {
    let (lo, hi) = img.min_max();
    if hi <= lo {
        let out = Image { data: vec![0.0; img.data.len()], range_hint: RangeHint::Unit, ..img.clone() };
        return (out, Some(Warning::ConstantImage.emit("normalize_minmax")));
    }
    let span = hi - lo;
    let data = img.data.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect();
    (Image { data, range_hint: RangeHint::Unit, ..img.clone() }, None)
}

/// Complements intensities (`p -> 1 - p`) for MONOCHROME1 images.
pub fn invert_contrast(img: &Image, meta: &ImageMeta) -> Image {
    match meta.photometric {
        Photometric::Monochrome1 => Image {
            data: img.data.iter().map(|&v| 1.0 - v).collect(),
            ..img.clone()
        },
        _ => img.clone(),
    }
}

/// Mirrors columns of RIGHT-laterality images.
pub fn flip_horizontal(img: &Image, meta: &ImageMeta) -> Image {
    if meta.laterality != Laterality::Right {
        return img.clone();
    }
    let ch = img.channels;
    let mut data = Vec::with_capacity(img.data.len());
    for r in 0..img.height {
        for c in (0..img.width).rev() {
            let start = (r * img.width + c) * ch;
            data.extend_from_slice(&img.data[start..start + ch]);
        }
    }
    Image { data, ..img.clone() }
}

/// Zero-pads on the right and bottom up to `target_w`×`target_h`.
pub fn pad_to(img: &Image, target_w: usize, target_h: usize) -> Result<Image> {
    if img.width > target_w || img.height > target_h {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} larger than pad target {target_w}x{target_h}",
            img.width, img.height
        )));
    }
    let ch = img.channels;
    let mut data = vec![0.0; target_w * target_h * ch];
    for r in 0..img.height {
        let src = r * img.width * ch;
        let dst = r * target_w * ch;
        data[dst..dst + img.width * ch].copy_from_slice(&img.data[src..src + img.width * ch]);
    }
    Image::new(target_w, target_h, ch, data, img.range_hint)
}

/// Averages the channels of an RGB image into one; grayscale passes through.
pub fn channel_average(img: &Image) -> Result<Image> {
    match img.channels {
        1 => Ok(img.clone()),
        3 => {
            let data = img.data.chunks_exact(3).map(|p| (p[0] + p[1] + p[2]) / 3.0).collect();
            Image::new(img.width, img.height, 1, data, img.range_hint)
        }
        n => Err(Error::InvalidImage(format!("channel_average expects 1 or 3 channels, got {n}"))),
    }
}

/// Rescales an image onto the 0–255 amplitude range.
///
/// Images with a declared range are scaled by `255 / max`; images without one
/// are min-max stretched to span `[0, 255]`.
pub fn rescale_to_255(img: &Image) -> Image {
    let data = match img.range_hint.max_value() {
        Some(max) if max == 255.0 => img.data.clone(),
        Some(max) => img.data.iter().map(|&v| v * (255.0 / max)).collect(),
        None => {
            let (unit, _) = normalize_minmax(img);
            unit.data.iter().map(|&v| v * 255.0).collect()
        }
    };
    Image { data, range_hint: RangeHint::Byte, ..img.clone() }
}

/// Variance of the additive noise for a given level, in 0–255 units².
///
/// The level is the noise variance expressed as a percentage of the maximum
/// amplitude 255.
pub fn noise_variance(level_percent: f64) -> f64 {
    level_percent / 100.0 * 255.0
}

/// Adds seeded zero-mean Gaussian noise after rescaling to `[0, 255]`, then
/// clips to `[0, 255]`.
///
/// Noise is drawn from ChaCha8 seeded with `seed`, one standard normal per
/// value in storage order, so results are reproducible across platforms.
pub fn add_gaussian_noise(img: &Image, level_percent: f64, seed: u64) -> Result<Image> {
    if !(level_percent >= 0.0) || !level_percent.is_finite() {
        return Err(Error::InvalidArgument(format!("noise level must be >= 0, got {level_percent}")));
    }
    let base = rescale_to_255(img);
    if level_percent == 0.0 {
        return Ok(base);
    }
    let sigma = noise_variance(level_percent).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = base
        .data
        .iter()
        .map(|&v| {
            let eps: f64 = StandardNormal.sample(&mut rng);
            (v + sigma * eps).clamp(0.0, 255.0)
        })
        .collect();
    Ok(Image { data, ..base })
}
