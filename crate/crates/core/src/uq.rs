//! Predictive uncertainty from sample stacks.
//!
//! A stack holds the M outputs produced for one source image, either by
//! Monte-Carlo dropout or by the members of an ensemble. Its uncertainty is
//! the pixel-wise population standard deviation map σ; the per-image
//! predictive standard deviation (PSD) is the mean of σ, and the test-set
//! mPSD is the unweighted mean of PSDs. Sigma maps are computed on raw model
//! amplitudes; no normalisation is applied.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::fft::{self, Direction};
use crate::image::{self, Image, RangeHint};
use crate::io;
use crate::manifest::{self, StackKind, StackManifest};

#[derive(Debug, Clone, PartialEq)]
pub struct SampleStack {
    source_id: String,
    samples: Vec<Image>,
    kind: StackKind,
    model_ids: Vec<String>,
}

impl SampleStack {
    /// Validates shape consistency, `M >= 2` and, for ensembles, one unique
    /// model id per sample.
    pub fn new(
        source_id: impl Into<String>,
        samples: Vec<Image>,
        kind: StackKind,
        model_ids: Vec<String>,
    ) -> Result<Self> {
        let source_id = source_id.into();
        if samples.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "stack {source_id}: need at least 2 samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|s| !s.same_shape(&samples[0])) {
            return Err(Error::DimensionMismatch(format!("stack {source_id}: samples differ in shape")));
        }
        if kind == StackKind::Ensemble {
            if model_ids.len() != samples.len() {
                return Err(Error::InvalidArgument(format!(
                    "stack {source_id}: {} model ids for {} samples",
                    model_ids.len(),
                    samples.len()
                )));
            }
            let mut sorted = model_ids.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != model_ids.len() {
                return Err(Error::InvalidArgument(format!("stack {source_id}: duplicate model ids")));
            }
        }
        Ok(SampleStack { source_id, samples, kind, model_ids })
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn samples(&self) -> &[Image] {
        &self.samples
    }

    pub fn kind(&self) -> StackKind {
        self.kind
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyRecord {
    pub source_id: String,
    pub sigma_map: Image,
    pub psd: f64,
}

/// Per-pixel population standard deviation (divisor M) across the stack,
/// after averaging RGB samples to one channel.
pub fn pixelwise_std(stack: &SampleStack) -> Result<Image> {
    let gray: Vec<Image> = stack.samples.iter().map(image::channel_average).collect::<Result<_>>()?;
    let m = gray.len() as f64;
    let (w, h) = (gray[0].width(), gray[0].height());
    let data = (0..w * h)
        .map(|i| {
            let first = gray[0].data()[i];
            // sum/m can round away from the common value, so agreement is exact zero
            if gray.iter().all(|g| g.data()[i] == first) {
                return 0.0;
            }
            let mean = gray.iter().map(|g| g.data()[i]).sum::<f64>() / m;
            let ss = gray.iter().map(|g| (g.data()[i] - mean).powi(2)).sum::<f64>();
            (ss / m).sqrt()
        })
        .collect();
    Image::new(w, h, 1, data, RangeHint::Unspecified)
}

/// Mean of all sigma-map values.
pub fn psd(sigma_map: &Image) -> f64 {
    sigma_map.mean()
}

/// Unweighted mean of per-image PSDs.
pub fn mpsd(records: &[UncertaintyRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("mpsd of an empty record list".into()));
    }
    Ok(records.iter().map(|r| r.psd).sum::<f64>() / records.len() as f64)
}

fn is_constant(img: &Image) -> bool {
    let (lo, hi) = img.min_max();
    hi <= lo
}

/// Integer translation `(dy, dx)` such that `moving.roll(dy, dx)` best matches
/// `fixed`, found as the phase-correlation peak within `±max_shift`.
///
/// Ties go to the smallest shift norm, then lexicographic order. Constant
/// images yield `(0, 0)` with [`Warning::DegenerateRegistration`].
pub fn register_translation(
    moving: &Image,
    fixed: &Image,
    max_shift: usize,
) -> Result<((isize, isize), Option<Warning>)> {
    if moving.width() != fixed.width() || moving.height() != fixed.height() {
        return Err(Error::DimensionMismatch(format!(
            "register {}x{} onto {}x{}",
            moving.width(),
            moving.height(),
            fixed.width(),
            fixed.height()
        )));
    }
    let moving = image::channel_average(moving)?;
    let fixed = image::channel_average(fixed)?;
    if is_constant(&moving) || is_constant(&fixed) {
        return Ok(((0, 0), Some(Warning::DegenerateRegistration.emit("register_translation"))));
    }
    let (w, h) = (moving.width(), moving.height());
    let centered = |img: &Image| {
        let mean = img.mean();
        img.data().iter().map(|v| v - mean).collect::<Vec<_>>()
    };
    let fm = fft::forward_real(&centered(&moving), w, h);
    let ff = fft::forward_real(&centered(&fixed), w, h);
    // the peak of IFFT(F·M̄) sits at the shift that maps moving onto fixed
    let mut cross: Vec<Complex64> = ff.iter().zip(&fm).map(|(f, m)| f * m.conj()).collect();
    let peak_mag = cross.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let floor = peak_mag * 1e-12;
    for c in &mut cross {
        let n = c.norm();
        *c = if n > floor { *c / n } else { Complex64::default() };
    }
    fft::fft2(&mut cross, w, h, Direction::Inverse);

    let reach_y = max_shift.min((h - 1) / 2) as isize;
    let reach_x = max_shift.min((w - 1) / 2) as isize;
    let mut best: Option<(f64, (isize, isize))> = None;
    for dy in -reach_y..=reach_y {
        for dx in -reach_x..=reach_x {
            let r = dy.rem_euclid(h as isize) as usize;
            let c = dx.rem_euclid(w as isize) as usize;
            let v = cross[r * w + c].re;
            let better = match best {
                None => true,
                Some((bv, (by, bx))) => {
                    v > bv || (v == bv && (dy * dy + dx * dx, dy, dx) < (by * by + bx * bx, by, bx))
                }
            };
            if better {
                best = Some((v, (dy, dx)));
            }
        }
    }
    Ok((best.map(|(_, s)| s).unwrap_or((0, 0)), None))
}

pub const DEFAULT_CROP: usize = 5;
pub const DEFAULT_MAX_SHIFT: usize = 10;

/// Registers every sample to `reference`, applies the recovered circular
/// shift, then crops `crop` pixels from each side.
pub fn align_stack(stack: &SampleStack, reference: &Image, crop: usize, max_shift: usize) -> Result<SampleStack> {
    let first = &stack.samples[0];
    if reference.width() != first.width() || reference.height() != first.height() {
        return Err(Error::DimensionMismatch(format!(
            "stack {}: reference {}x{} vs samples {}x{}",
            stack.source_id,
            reference.width(),
            reference.height(),
            first.width(),
            first.height()
        )));
    }
    let (w, h) = (first.width(), first.height());
    if 2 * crop >= w.min(h) {
        return Err(Error::InvalidArgument(format!("crop {crop} too large for {w}x{h}")));
    }
    let samples = stack
        .samples
        .iter()
        .map(|s| {
            let ((dy, dx), _) = register_translation(s, reference, max_shift)?;
            s.roll(dy, dx).crop(crop, crop, w - 2 * crop, h - 2 * crop)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleStack { samples, ..stack.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UqOptions {
    pub align: bool,
    pub crop: usize,
    pub max_shift: usize,
}

impl Default for UqOptions {
    fn default() -> Self {
        UqOptions { align: false, crop: DEFAULT_CROP, max_shift: DEFAULT_MAX_SHIFT }
    }
}

/// A stack read from disk together with its source image, when readable.
#[derive(Debug, Clone)]
pub struct LoadedStack {
    pub stack: SampleStack,
    pub source: Option<Image>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackFailure {
    pub source_id: String,
    pub error: String,
}

/// Loads every stack of a manifest; malformed stacks are returned as failures.
/// Source images are only read when `with_source` is set.
pub fn load_stacks(manifest: &StackManifest, with_source: bool) -> Vec<std::result::Result<LoadedStack, StackFailure>> {
    manifest
        .stacks
        .par_iter()
        .map(|entry| {
            let load = || -> Result<LoadedStack> {
                let samples = entry.sample_paths.iter().map(|p| io::load_image(p)).collect::<Result<Vec<_>>>()?;
                let model_ids = entry.model_ids.clone().unwrap_or_default();
                let stack = SampleStack::new(entry.source_id.clone(), samples, manifest.kind, model_ids)?;
                let source = if with_source { Some(io::load_image(&entry.source_path)?) } else { None };
                Ok(LoadedStack { stack, source })
            };
            load().map_err(|e| StackFailure { source_id: entry.source_id.clone(), error: e.to_string() })
        })
        .collect()
}

fn evaluate_one(loaded: &LoadedStack, opts: &UqOptions) -> Result<UncertaintyRecord> {
    let stack = match (&loaded.source, opts.align) {
        (Some(src), true) => align_stack(&loaded.stack, src, opts.crop, opts.max_shift)?,
        (None, true) => return Err(Error::InvalidArgument("alignment requested without a source image".into())),
        (_, false) => loaded.stack.clone(),
    };
    // sigma maps are persisted as f32; the PSD is taken from the stored values
    let sigma_map = pixelwise_std(&stack)?.to_f32_precision();
    let psd = psd(&sigma_map);
    Ok(UncertaintyRecord { source_id: stack.source_id.clone(), sigma_map, psd })
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub kind: StackKind,
    /// Ordered by `source_id`.
    pub records: Vec<UncertaintyRecord>,
    pub mpsd: f64,
    pub skipped: Vec<StackFailure>,
}

/// Sigma maps, PSDs and mPSD for already-loaded stacks.
pub fn evaluate_loaded(
    kind: StackKind,
    loaded: &[std::result::Result<LoadedStack, StackFailure>],
    opts: &UqOptions,
) -> Result<Evaluation> {
    let results: Vec<std::result::Result<UncertaintyRecord, StackFailure>> = loaded
        .par_iter()
        .map(|l| match l {
            Ok(l) => evaluate_one(l, opts)
                .map_err(|e| StackFailure { source_id: l.stack.source_id.clone(), error: e.to_string() }),
            Err(f) => Err(f.clone()),
        })
        .collect();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => {
                log::warn!("skipping stack {}: {}", f.source_id, f.error);
                skipped.push(f);
            }
        }
    }
    records.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    skipped.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    if records.is_empty() {
        return Err(Error::InvalidArgument("no stack could be evaluated".into()));
    }
    let mpsd = mpsd(&records)?;
    Ok(Evaluation { kind, records, mpsd, skipped })
}

/// Loads and evaluates every stack of the manifest at `manifest_path`.
pub fn evaluate_stacks(manifest_path: &Path, opts: &UqOptions) -> Result<Evaluation> {
    let manifest = StackManifest::load(manifest_path)?;
    evaluate_loaded(manifest.kind, &load_stacks(&manifest, opts.align), opts)
}

/// Replaces characters that are unsafe in file names.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLine {
    pub source_id: String,
    pub psd: f64,
    pub sigma_map: PathBuf,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqSummary {
    pub kind: StackKind,
    pub mpsd: f64,
    pub n_records: usize,
    pub skipped: Vec<StackFailure>,
}

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "uq_summary.json";

/// Writes `records.jsonl`, one sigma map per record under `sigma/`, and
/// `uq_summary.json` into `out_dir`.
pub fn write_evaluation(eval: &Evaluation, out_dir: &Path) -> Result<()> {
    let mut lines = String::new();
    for rec in &eval.records {
        let rel = PathBuf::from("sigma").join(format!("{}.{}", file_stem(&rec.source_id), io::RAW_TENSOR_EXT));
        io::save_raw_tensor(&out_dir.join(&rel), &rec.sigma_map)?;
        let line = RecordLine {
            source_id: rec.source_id.clone(),
            psd: rec.psd,
            sigma_map: rel,
            width: rec.sigma_map.width(),
            height: rec.sigma_map.height(),
        };
        lines.push_str(&serde_json::to_string(&line).map_err(|e| Error::json(out_dir, e))?);
        lines.push('\n');
    }
    io::write_file(&out_dir.join(RECORDS_FILE), lines.as_bytes())?;
    let summary = UqSummary {
        kind: eval.kind,
        mpsd: eval.mpsd,
        n_records: eval.records.len(),
        skipped: eval.skipped.clone(),
    };
    manifest::write_json(&out_dir.join(SUMMARY_FILE), &summary)
}

/// Reads back a records file written by [`write_evaluation`].
pub fn read_records(path: &Path) -> Result<Vec<RecordLine>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}
