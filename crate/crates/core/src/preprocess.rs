//! Whole-mammogram preprocessing: background segmentation, patch parsing with
//! a fill criterion, and per-patch histogram equalisation.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::image::{self, Image, RangeHint};
use crate::io;
use crate::manifest::{self, ImageEntry, ImageManifest};

/// Patch geometry. Defaults tile a 2224² canvas with 256² patches every 246
/// pixels (10-pixel overlap, 9×9 candidate origins).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub patch_size: usize,
    pub stride: usize,
    pub fill_threshold: f64,
    pub canvas: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec { patch_size: 256, stride: 246, fill_threshold: 0.99, canvas: 2224 }
    }
}

impl PatchSpec {
    /// Checks the geometry; inexact tiling is a warning, not an error.
    pub fn validate(&self) -> Result<Option<Warning>> {
        if !(0 < self.stride && self.stride <= self.patch_size && self.patch_size <= self.canvas) {
            return Err(Error::InvalidArgument(format!(
                "require 0 < stride ({}) <= patch_size ({}) <= canvas ({})",
                self.stride, self.patch_size, self.canvas
            )));
        }
        if !(self.fill_threshold > 0.0 && self.fill_threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "fill_threshold must be in (0, 1], got {}",
                self.fill_threshold
            )));
        }
        if (self.canvas - self.patch_size) % self.stride != 0 {
            return Ok(Some(Warning::InexactTiling.emit("PatchSpec")));
        }
        Ok(None)
    }

    /// Candidate origins along one axis.
    pub fn axis_origins(&self) -> impl Iterator<Item = usize> {
        let last = (self.canvas - self.patch_size) / self.stride;
        let stride = self.stride;
        (0..=last).map(move |i| i * stride)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub image: Image,
    /// `(row, col)` of the top-left corner in canvas coordinates.
    pub origin: (usize, usize),
    pub parent_id: String,
}

fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<u64> {
    let mut hist = vec![0u64; bins];
    let scale = bins as f64 / (hi - lo);
    for &v in values {
        let b = ((v - lo) * scale).floor();
        let b = if b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
        hist[b] += 1;
    }
    hist
}

/// Between-class variance of a split, scaled by N²: `(n1·S0 − n0·S1)² / (n0·n1)`,
/// kept as an exact fraction when it fits in 128 bits.
#[derive(Debug, Clone, Copy)]
enum SplitScore {
    Exact { num: u128, den: u128 },
    Approx(f64),
}

impl SplitScore {
    fn new(n0: u64, s0: u64, n1: u64, s1: u64) -> Self {
        let exact = || {
            let a = (n1 as u128).checked_mul(s0 as u128)?;
            let b = (n0 as u128).checked_mul(s1 as u128)?;
            let d = a.abs_diff(b);
            Some(SplitScore::Exact { num: d.checked_mul(d)?, den: n0 as u128 * n1 as u128 })
        };
        exact().unwrap_or_else(|| {
            let d = n1 as f64 * s0 as f64 - n0 as f64 * s1 as f64;
            SplitScore::Approx(d * d / (n0 as f64 * n1 as f64))
        })
    }

    fn as_f64(self) -> f64 {
        match self {
            SplitScore::Exact { num, den } => num as f64 / den as f64,
            SplitScore::Approx(v) => v,
        }
    }

    fn cmp(self, other: SplitScore) -> Ordering {
        match (self, other) {
            (SplitScore::Exact { num: n1, den: d1 }, SplitScore::Exact { num: n2, den: d2 }) => {
                let (q1, r1) = (n1 / d1, n1 % d1);
                let (q2, r2) = (n2 / d2, n2 % d2);
                q1.cmp(&q2).then_with(|| match (r1.checked_mul(d2), r2.checked_mul(d1)) {
                    (Some(a), Some(b)) => a.cmp(&b),
                    _ => (r1 as f64 / d1 as f64).total_cmp(&(r2 as f64 / d2 as f64)),
                })
            }
            (a, b) => a.as_f64().total_cmp(&b.as_f64()),
        }
    }
}

/// Bin edge index `k` (class 0 = bins `< k`) maximising between-class
/// variance of `hist`; ties resolve to the lowest `k`. `None` when every
/// split leaves one class empty.
pub fn otsu_bin(hist: &[u64]) -> Option<usize> {
    let total: u64 = hist.iter().sum();
    let weighted: u64 = hist.iter().enumerate().map(|(i, &h)| i as u64 * h).sum();
    let (mut n0, mut s0) = (0u64, 0u64);
    let mut best: Option<(usize, SplitScore)> = None;
    for k in 1..hist.len() {
        n0 += hist[k - 1];
        s0 += (k as u64 - 1) * hist[k - 1];
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let score = SplitScore::new(n0, s0, n1, weighted - s0);
        if best.is_none_or(|(_, b)| score.cmp(b) == Ordering::Greater) {
            best = Some((k, score));
        }
    }
    best.map(|(k, _)| k)
}

/// Otsu threshold on a `bins`-bin histogram spanning the image's range.
///
/// Returns the bin-edge intensity of the best split. A constant image has no
/// split: its minimum is returned with [`Warning::NoThresholdSplit`].
pub fn otsu_threshold(img: &Image, bins: usize) -> Result<(f64, Option<Warning>)> {
    if img.channels() != 1 {
        return Err(Error::InvalidArgument("otsu_threshold expects a single channel".into()));
    }
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("bins must be >= 2, got {bins}")));
    }
    let (lo, hi) = img.min_max();
    if hi <= lo {
        return Ok((lo, Some(Warning::NoThresholdSplit.emit("otsu_threshold"))));
    }
    let hist = histogram(img.data(), lo, hi, bins);
    match otsu_bin(&hist) {
        Some(k) => Ok((lo + k as f64 * (hi - lo) / bins as f64, None)),
        None => Ok((lo, Some(Warning::NoThresholdSplit.emit("otsu_threshold")))),
    }
}

/// Labels 4-connected components of `mask`; returns the label grid (0 =
/// background) and the size of each label (index `label - 1`).
pub fn label_components(mask: &[bool], width: usize, height: usize) -> (Vec<u32>, Vec<usize>) {
    let mut labels = vec![0u32; mask.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (r, c) = (i / width, i % width);
            let mut visit = |j: usize| {
                if mask[j] && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - width);
            }
            if r + 1 < height {
                visit(i + width);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < width {
                visit(i + 1);
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Zeroes pixels at or below the Otsu threshold and, when `largest_only`,
/// every foreground component except the largest 4-connected one (first in
/// row-major order on ties). Foreground intensities are kept as-is.
pub fn segment_foreground(img: &Image, largest_only: bool) -> Result<(Image, Vec<Warning>)> {
    let (threshold, warn) = otsu_threshold(img, 256)?;
    let mut warnings: Vec<Warning> = warn.into_iter().collect();
    let mask: Vec<bool> = img.data().iter().map(|&v| v > threshold).collect();
    let keep: Vec<bool> = if largest_only {
        let (labels, sizes) = label_components(&mask, img.width(), img.height());
        let best = sizes
            .iter()
            .enumerate()
            .fold(None::<(usize, usize)>, |acc, (i, &s)| match acc {
                Some((_, bs)) if bs >= s => acc,
                _ => Some((i, s)),
            })
            .map(|(i, _)| i as u32 + 1);
        labels.iter().map(|&l| Some(l) == best).collect()
    } else {
        mask
    };
    if !keep.iter().any(|&k| k) {
        warnings.push(Warning::EmptyForeground.emit("segment_foreground"));
    }
    let data = img.data().iter().zip(&keep).map(|(&v, &k)| if k { v } else { 0.0 }).collect();
    let out = Image::new(img.width(), img.height(), 1, data, img.range_hint())?;
    Ok((out, warnings))
}

/// Extracts every candidate window that is strictly more than
/// `fill_threshold` non-zero, in row-major order of origins.
pub fn parse_patches(img: &Image, spec: &PatchSpec, parent_id: &str) -> Result<Vec<Patch>> {
    spec.validate()?;
    if img.width() != spec.canvas || img.height() != spec.canvas || img.channels() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "parse_patches expects a single-channel {0}x{0} canvas, got {1}x{2}x{3}",
            spec.canvas,
            img.width(),
            img.height(),
            img.channels()
        )));
    }
    let n = spec.canvas;
    // summed-area table of non-zero indicators, (n+1)² with a zero border
    let mut sat = vec![0u32; (n + 1) * (n + 1)];
    for r in 0..n {
        let mut row_sum = 0u32;
        for c in 0..n {
            row_sum += (img.data()[r * n + c] > 0.0) as u32;
            sat[(r + 1) * (n + 1) + c + 1] = sat[r * (n + 1) + c + 1] + row_sum;
        }
    }
    let p = spec.patch_size;
    let window_count = |r: usize, c: usize| {
        let at = |rr: usize, cc: usize| sat[rr * (n + 1) + cc] as i64;
        (at(r + p, c + p) - at(r, c + p) - at(r + p, c) + at(r, c)) as f64
    };
    let required = spec.fill_threshold * (p * p) as f64;
    let mut patches = Vec::new();
    for r in spec.axis_origins() {
        for c in spec.axis_origins() {
            if window_count(r, c) > required {
                patches.push(Patch {
                    image: img.crop(r, c, p, p)?,
                    origin: (r, c),
                    parent_id: parent_id.to_string(),
                });
            }
        }
    }
    Ok(patches)
}

/// Maps intensities through the empirical CDF of `bins` uniform bins over
/// `[0, 1]`, then min-max normalises. Constant patches come out all-zero with
/// [`Warning::ConstantImage`].
pub fn equalize_histogram(patch: &Image, bins: usize) -> Result<(Image, Option<Warning>)> {
    if patch.channels() != 1 {
        return Err(Error::InvalidArgument("equalize_histogram expects a single channel".into()));
    }
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("bins must be >= 2, got {bins}")));
    }
    let hist = histogram(patch.data(), 0.0, 1.0, bins);
    let total = patch.data().len() as f64;
    let cdf: Vec<f64> = hist
        .iter()
        .scan(0u64, |acc, &h| {
            *acc += h;
            Some(*acc as f64 / total)
        })
        .collect();
    let bin_of = |v: f64| ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1);
    let mapped = patch.map(RangeHint::Unit, |v| cdf[bin_of(v)])?;
    Ok(image::normalize_minmax(&mapped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineOptions {
    /// Keep only the largest connected foreground component after Otsu.
    pub largest_component: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions { largest_component: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub id: String,
    pub parent_id: String,
    pub origin: [usize; 2],
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineError {
    pub source_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchManifest {
    pub patches: Vec<PatchRecord>,
    pub errors: Vec<PipelineError>,
    pub spec: PatchSpec,
}

pub const PATCH_MANIFEST_FILE: &str = "patches.json";

/// Runs one manifest entry through the full per-image chain and returns its
/// equalised patches.
pub fn preprocess_image(
    img: &Image,
    entry: &ImageEntry,
    spec: &PatchSpec,
    opts: &PipelineOptions,
) -> Result<Vec<Patch>> {
    let meta = entry.meta();
    let gray = image::channel_average(img)?;
    let (unit, _) = image::normalize_minmax(&gray);
    let inverted = image::invert_contrast(&unit, &meta);
    let segmented = if entry.pre_segmented {
        inverted
    } else {
        segment_foreground(&inverted, opts.largest_component)?.0
    };
    let flipped = image::flip_horizontal(&segmented, &meta);
    let (normalized, _) = image::normalize_minmax(&flipped);
    let canvas = image::pad_to(&normalized, spec.canvas, spec.canvas)?;
    parse_patches(&canvas, spec, &entry.source_id)?
        .into_iter()
        .map(|p| {
            let (eq, _) = equalize_histogram(&p.image, 256)?;
            Ok(Patch { image: eq, ..p })
        })
        .collect()
}

fn patch_id(parent: &str, origin: (usize, usize)) -> String {
    format!("{parent}_{:04}_{:04}", origin.0, origin.1)
}

/// Preprocesses every image of `manifest_path`, writing accepted patches as
/// raw tensors under `out_dir/patches/` and the patch manifest to
/// `out_dir/patches.json`. Per-image failures are recorded, not fatal.
pub fn run_pipeline(
    manifest_path: &Path,
    spec: &PatchSpec,
    opts: &PipelineOptions,
    out_dir: &Path,
) -> Result<PatchManifest> {
    spec.validate()?;
    let manifest = ImageManifest::load(manifest_path)?;
    let patch_dir = out_dir.join("patches");

    let per_image: Vec<Result<Vec<PatchRecord>>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let img = io::load_image(&entry.path)?;
            let patches = preprocess_image(&img, entry, spec, opts)?;
            patches
                .iter()
                .map(|p| {
                    let id = patch_id(&p.parent_id, p.origin);
                    let rel = PathBuf::from("patches").join(format!("{id}.{}", io::RAW_TENSOR_EXT));
                    io::save_raw_tensor(&patch_dir.join(format!("{id}.{}", io::RAW_TENSOR_EXT)), &p.image)?;
                    Ok(PatchRecord {
                        id,
                        parent_id: p.parent_id.clone(),
                        origin: [p.origin.0, p.origin.1],
                        path: rel,
                    })
                })
                .collect()
        })
        .collect();

    let mut out = PatchManifest { patches: Vec::new(), errors: Vec::new(), spec: *spec };
    for (entry, result) in manifest.entries.iter().zip(per_image) {
        match result {
            Ok(records) => out.patches.extend(records),
            Err(e) => {
                log::warn!("preprocess {}: {e}", entry.source_id);
                out.errors.push(PipelineError { source_id: entry.source_id.clone(), error: e.to_string() });
            }
        }
    }
    manifest::write_json(&out_dir.join(PATCH_MANIFEST_FILE), &out)?;
    Ok(out)
}
