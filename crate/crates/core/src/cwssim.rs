//! Complex wavelet structural similarity (CW-SSIM).
//!
//! Images are decomposed with a complex steerable pyramid built in the
//! frequency domain: a high-pass residual, `levels × orientations` complex
//! oriented band-pass subbands (each level downsampled by two), and a
//! low-pass residual. Radial masks are raised-cosine transitions in log₂
//! frequency; angular masks are `cos^(K-1)` lobes restricted to a half-plane,
//! so each subband is analytic. Masks are scaled so the decomposition is a
//! tight frame: subband plus residual energies add up to the image energy.
//!
//! The similarity index of a window of coefficients is
//! `(2|Σ cₐ·c̄_b| + K) / (Σ|cₐ|² + Σ|c_b|² + K)`, averaged over windows and
//! then over subbands.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{self, Direction};
use crate::image::{self, Image, RangeHint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PyramidConfig {
    pub levels: usize,
    pub orientations: usize,
    /// Side of the square comparison window; odd.
    pub window: usize,
    /// Stabilising constant `K`, in units of the 0–255 coefficient scale.
    pub stability_k: f64,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig { levels: 4, orientations: 6, window: 7, stability_k: 0.01 }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::InvalidArgument("levels must be >= 1".into()));
        }
        if self.orientations < 2 {
            return Err(Error::InvalidArgument("orientations must be >= 2".into()));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::InvalidArgument(format!("window must be odd and >= 3, got {}", self.window)));
        }
        if !(self.stability_k > 0.0) {
            return Err(Error::InvalidArgument("stability_k must be > 0".into()));
        }
        Ok(())
    }

    /// Smallest image side the configuration accepts.
    pub fn min_side(&self) -> usize {
        (1usize << self.levels) * self.window
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSubband {
    pub level: usize,
    pub orientation: usize,
    pub width: usize,
    pub height: usize,
    pub coefficients: Vec<Complex64>,
}

impl ComplexSubband {
    pub fn energy(&self) -> f64 {
        self.coefficients.iter().map(|c| c.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    /// Full-resolution real high-pass residual.
    pub highpass: Vec<f64>,
    /// Oriented subbands, ordered by level then orientation.
    pub bands: Vec<ComplexSubband>,
    pub lowpass: Vec<f64>,
    pub lowpass_width: usize,
    pub lowpass_height: usize,
}

impl Pyramid {
    pub fn band(&self, level: usize, orientation: usize) -> Option<&ComplexSubband> {
        self.bands.iter().find(|b| b.level == level && b.orientation == orientation)
    }

    pub fn residual_energy(&self) -> f64 {
        self.highpass.iter().map(|v| v * v).sum::<f64>() + self.lowpass.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Raised-cosine pair over one octave `[edge - 1, edge]` of `log2(r)`:
/// returns `(low, high)` with `low² + high² = 1`.
fn radial_split(log_rad: f64, edge: f64) -> (f64, f64) {
    let t = (log_rad - (edge - 1.0)).clamp(0.0, 1.0);
    let phase = FRAC_PI_2 * t;
    (phase.cos(), phase.sin())
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Amplitude of the complex angular lobe for orientation `b` at angle `theta`.
///
/// The real steerable lobes `α·cos^(K-1)(θ − πb/K)` satisfy Σ_b lobe² = 1; the
/// analytic version keeps one half-plane scaled by √2 so energy is preserved
/// for real inputs.
pub fn angular_response(theta: f64, orientation: usize, orientations: usize) -> f64 {
    let order = orientations - 1;
    let alpha_sq = 4f64.powi(order as i32) * factorial(order).powi(2)
        / (orientations as f64 * factorial(2 * order));
    let center = PI * orientation as f64 / orientations as f64;
    let d = (theta - center + PI).rem_euclid(2.0 * PI) - PI;
    if d.abs() < FRAC_PI_2 {
        (2.0 * alpha_sq).sqrt() * d.cos().powi(order as i32)
    } else {
        0.0
    }
}

/// `(log2 r, θ)` of DFT bin `(ky, kx)` on a `width`×`height` grid, with
/// frequencies in units of the grid's Nyquist frequency.
fn polar(ky: usize, kx: usize, width: usize, height: usize) -> (f64, f64) {
    let fx = fft::signed_freq(kx, width) as f64 / (width as f64 / 2.0);
    let fy = fft::signed_freq(ky, height) as f64 / (height as f64 / 2.0);
    let r = (fx * fx + fy * fy).sqrt();
    let log_rad = if r > 0.0 { r.log2() } else { f64::NEG_INFINITY };
    (log_rad, fy.atan2(fx))
}

/// Keeps the central `new_w`×`new_h` frequencies, scaled to preserve energy.
fn downsample_spectrum(spec: &[Complex64], w: usize, h: usize, new_w: usize, new_h: usize) -> Vec<Complex64> {
    let scale = ((new_w * new_h) as f64 / (w * h) as f64).sqrt();
    let mut out = Vec::with_capacity(new_w * new_h);
    for ky in 0..new_h {
        let sy = fft::signed_freq(ky, new_h).rem_euclid(h as isize) as usize;
        for kx in 0..new_w {
            let sx = fft::signed_freq(kx, new_w).rem_euclid(w as isize) as usize;
            out.push(spec[sy * w + sx] * scale);
        }
    }
    out
}

/// Complex steerable pyramid of a single-channel image.
pub fn steerable_pyramid(img: &Image, cfg: &PyramidConfig) -> Result<Pyramid> {
    cfg.validate()?;
    if img.channels() != 1 {
        return Err(Error::InvalidArgument("steerable_pyramid expects a single channel".into()));
    }
    let (w, h) = (img.width(), img.height());
    if w.min(h) < cfg.min_side() {
        return Err(Error::InvalidArgument(format!(
            "image {w}x{h} too small for {} levels with window {} (need side >= {})",
            cfg.levels,
            cfg.window,
            cfg.min_side()
        )));
    }

    let spectrum = fft::forward_real(img.data(), w, h);
    let mut high = Vec::with_capacity(w * h);
    let mut low = Vec::with_capacity(w * h);
    for ky in 0..h {
        for kx in 0..w {
            let (log_rad, _) = polar(ky, kx, w, h);
            let (lo, hi) = radial_split(log_rad, 0.0);
            let v = spectrum[ky * w + kx];
            high.push(v * hi);
            low.push(v * lo);
        }
    }
    fft::fft2(&mut high, w, h, Direction::Inverse);
    let highpass = high.iter().map(|c| c.re).collect();

    let (mut lw, mut lh) = (w, h);
    let mut bands = Vec::with_capacity(cfg.levels * cfg.orientations);
    for level in 0..cfg.levels {
        let polar_grid: Vec<(f64, f64)> =
            (0..lh).flat_map(|ky| (0..lw).map(move |kx| polar(ky, kx, lw, lh))).collect();
        for orientation in 0..cfg.orientations {
            let mut band: Vec<Complex64> = low
                .iter()
                .zip(&polar_grid)
                .map(|(&v, &(log_rad, theta))| {
                    let (_, hi) = radial_split(log_rad, -1.0);
                    v * (hi * angular_response(theta, orientation, cfg.orientations))
                })
                .collect();
            fft::fft2(&mut band, lw, lh, Direction::Inverse);
            bands.push(ComplexSubband { level, orientation, width: lw, height: lh, coefficients: band });
        }
        for (v, &(log_rad, _)) in low.iter_mut().zip(&polar_grid) {
            *v *= radial_split(log_rad, -1.0).0;
        }
        let (nw, nh) = (lw / 2, lh / 2);
        low = downsample_spectrum(&low, lw, lh, nw, nh);
        (lw, lh) = (nw, nh);
    }
    fft::fft2(&mut low, lw, lh, Direction::Inverse);

    Ok(Pyramid {
        highpass,
        bands,
        lowpass: low.iter().map(|c| c.re).collect(),
        lowpass_width: lw,
        lowpass_height: lh,
    })
}

/// Min-max normalises to `[0, 1]` and rounds to integers in `[0, 255]`
/// (round half up).
pub fn quantize_u8(img: &Image) -> Result<Image> {
    if img.channels() != 1 {
        return Err(Error::InvalidArgument("quantize_u8 expects a single channel".into()));
    }
    let (unit, _) = image::normalize_minmax(img);
    unit.map(RangeHint::Byte, |p| (p * 255.0 + 0.5).floor())
}

/// Local CW-SSIM index of two equally sized coefficient windows.
pub fn local_index(a: &[Complex64], b: &[Complex64], k: f64) -> f64 {
    let cross: Complex64 = a.iter().zip(b).map(|(x, y)| x * y.conj()).sum();
    let ea: f64 = a.iter().map(|c| c.norm_sqr()).sum();
    let eb: f64 = b.iter().map(|c| c.norm_sqr()).sum();
    (2.0 * cross.norm() + k) / (ea + eb + k)
}

/// Sums over every full `win`×`win` window (stride 1, no padding), by a
/// horizontal then vertical pass.
fn box_sums<T>(values: &[T], w: usize, h: usize, win: usize) -> Vec<T>
where
    T: Copy + Default + std::ops::Add<Output = T>,
{
    let ow = w - win + 1;
    let oh = h - win + 1;
    let mut horiz = Vec::with_capacity(ow * h);
    for r in 0..h {
        let row = &values[r * w..(r + 1) * w];
        for c in 0..ow {
            horiz.push(row[c..c + win].iter().fold(T::default(), |acc, &v| acc + v));
        }
    }
    let mut out = Vec::with_capacity(ow * oh);
    for r in 0..oh {
        for c in 0..ow {
            out.push((r..r + win).fold(T::default(), |acc, rr| acc + horiz[rr * ow + c]));
        }
    }
    out
}

/// Mean local index over all full windows of one pair of subbands.
pub fn subband_similarity(a: &ComplexSubband, b: &ComplexSubband, window: usize, k: f64) -> f64 {
    let (w, h) = (a.width, a.height);
    let cross: Vec<Complex64> = a.coefficients.iter().zip(&b.coefficients).map(|(x, y)| x * y.conj()).collect();
    let ea: Vec<f64> = a.coefficients.iter().map(|c| c.norm_sqr()).collect();
    let eb: Vec<f64> = b.coefficients.iter().map(|c| c.norm_sqr()).collect();
    let cross = box_sums(&cross, w, h, window);
    let ea = box_sums(&ea, w, h, window);
    let eb = box_sums(&eb, w, h, window);
    let total: f64 = cross
        .iter()
        .zip(ea.iter().zip(&eb))
        .map(|(c, (x, y))| (2.0 * c.norm() + k) / (x + y + k))
        .sum();
    total / cross.len() as f64
}

/// CW-SSIM of two single-channel images of equal size, after 8-bit
/// quantisation of both.
pub fn cwssim(a: &Image, b: &Image, cfg: &PyramidConfig) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch(format!(
            "cwssim of {}x{}x{} and {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    let pa = steerable_pyramid(&quantize_u8(a)?, cfg)?;
    let pb = steerable_pyramid(&quantize_u8(b)?, cfg)?;
    let total: f64 = pa
        .bands
        .iter()
        .zip(&pb.bands)
        .map(|(x, y)| subband_similarity(x, y, cfg.window, cfg.stability_k))
        .sum();
    Ok(total / pa.bands.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchScores {
    /// Per-pair score, or the error that excluded the pair.
    pub scores: Vec<std::result::Result<f64, String>>,
    pub mean: f64,
}

/// Scores every pair; failed pairs are recorded and left out of the mean.
pub fn cwssim_batch(pairs: &[(Image, Image)], cfg: &PyramidConfig) -> Result<BatchScores> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("cwssim_batch needs at least one pair".into()));
    }
    let scores: Vec<std::result::Result<f64, String>> = pairs
        .par_iter()
        .map(|(a, b)| cwssim(a, b, cfg).map_err(|e| e.to_string()))
        .collect();
    let ok: Vec<f64> = scores.iter().filter_map(|s| s.as_ref().ok().copied()).collect();
    let failed = scores.len() - ok.len();
    if failed > 0 {
        log::warn!("cwssim_batch: {failed} of {} pairs failed and are excluded from the mean", scores.len());
    }
    if ok.is_empty() {
        return Err(Error::InvalidArgument("every cwssim pair failed".into()));
    }
    let mean = ok.iter().sum::<f64>() / ok.len() as f64;
    Ok(BatchScores { scores, mean })
}
