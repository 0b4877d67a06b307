//! Noise-sweep calibration protocol.
//!
//! A fixed test set is corrupted with increasing amounts of Gaussian noise.
//! Each noisy version is translated by the model under study (outside this
//! crate), and for every level the harness measures FID against a fixed
//! target set and the mPSD of the sample stacks. Well-calibrated uncertainty
//! should rise together with FID.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{pearson, spearman};
use crate::error::{Error, Result};
use crate::fid::{self, EmbeddingProvider, EmbeddingSet, ToyEmbedder};
use crate::image::{self, Image};
use crate::io;
use crate::manifest::{self, ImageEntry, ImageManifest, StackKind, StackManifest};
use crate::rng;
use crate::uq::{self, LoadedStack, StackFailure, UqOptions};

pub const DEFAULT_LEVELS: [f64; 5] = [0.0, 5.0, 10.0, 15.0, 20.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub noise_levels: Vec<f64>,
    pub seed: u64,
    pub embedding_provider: String,
    #[serde(default)]
    pub align: bool,
    #[serde(default = "default_crop")]
    pub crop: usize,
    #[serde(default = "default_max_shift")]
    pub max_shift: usize,
}

fn default_crop() -> usize {
    uq::DEFAULT_CROP
}

fn default_max_shift() -> usize {
    uq::DEFAULT_MAX_SHIFT
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            noise_levels: DEFAULT_LEVELS.to_vec(),
            seed: 0,
            embedding_provider: ToyEmbedder::default().provider_id(),
            align: false,
            crop: uq::DEFAULT_CROP,
            max_shift: uq::DEFAULT_MAX_SHIFT,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        validate_levels(&self.noise_levels)
    }

    pub fn uq_options(&self) -> UqOptions {
        UqOptions { align: self.align, crop: self.crop, max_shift: self.max_shift }
    }

    /// The embedder named by `embedding_provider`; only toy embedders can be
    /// instantiated in-process.
    pub fn provider(&self) -> Result<ToyEmbedder> {
        ToyEmbedder::from_provider_id(&self.embedding_provider).ok_or_else(|| {
            Error::InvalidArgument(format!("cannot embed images with provider {:?}", self.embedding_provider))
        })
    }
}

/// Levels must be non-empty, finite, non-negative and strictly increasing.
pub fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument("no noise levels".into()));
    }
    if levels.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::InvalidArgument(format!("noise levels must be finite and >= 0: {levels:?}")));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!("noise levels must be strictly increasing: {levels:?}")));
    }
    Ok(())
}

/// Directory name used for one noise level, e.g. `level_5` or `level_2.5`.
pub fn level_dir_name(level: f64) -> String {
    format!("level_{level}")
}

pub const LEVEL_MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyTestset {
    pub noise_percent: f64,
    pub manifest: PathBuf,
    pub n_images: usize,
    pub failures: Vec<StackFailure>,
}

/// Writes one noisy copy of the test set per level under
/// `out_dir/level_{ℓ}/`, as raw tensors on the 0–255 scale plus a manifest
/// carrying the original metadata. Images that fail to load are reported per
/// level and left out of that level's manifest.
pub fn make_noisy_testsets(test_manifest: &Path, cfg: &SweepConfig, out_dir: &Path) -> Result<Vec<NoisyTestset>> {
    cfg.validate()?;
    let manifest = ImageManifest::load(test_manifest)?;
    let loaded: Vec<std::result::Result<Image, String>> = manifest
        .entries
        .par_iter()
        .map(|e| io::load_image(&e.path).map_err(|err| err.to_string()))
        .collect();

    cfg.noise_levels
        .iter()
        .map(|&level| {
            let dir = out_dir.join(level_dir_name(level));
            let written: Vec<std::result::Result<ImageEntry, StackFailure>> = manifest
                .entries
                .par_iter()
                .zip(&loaded)
                .map(|(entry, img)| {
                    let fail = |error: String| StackFailure { source_id: entry.source_id.clone(), error };
                    let img = img.as_ref().map_err(|e| fail(e.clone()))?;
                    let seed = rng::derive_seed(cfg.seed, &entry.source_id, level);
                    let noisy = image::add_gaussian_noise(img, level, seed).map_err(|e| fail(e.to_string()))?;
                    let rel = PathBuf::from("images")
                        .join(format!("{}.{}", uq::file_stem(&entry.source_id), io::RAW_TENSOR_EXT));
                    io::save_raw_tensor(&dir.join(&rel), &noisy).map_err(|e| fail(e.to_string()))?;
                    Ok(ImageEntry { path: dir.join(rel), ..entry.clone() })
                })
                .collect();
            let mut entries = Vec::new();
            let mut failures = Vec::new();
            for w in written {
                match w {
                    Ok(e) => entries.push(e),
                    Err(f) => {
                        log::warn!("level {level}: {}: {}", f.source_id, f.error);
                        failures.push(f);
                    }
                }
            }
            let path = dir.join(LEVEL_MANIFEST_FILE);
            let n_images = entries.len();
            ImageManifest { entries }.save(&path)?;
            Ok(NoisyTestset { noise_percent: level, manifest: path, n_images, failures })
        })
        .collect()
}

/// Single-channel, per-image [0, 1] normalised copies, as fed to the embedder.
pub fn prepare_for_embedding(images: &[Image]) -> Result<Vec<Image>> {
    images
        .par_iter()
        .map(|img| Ok(image::normalize_minmax(&image::channel_average(img)?).0))
        .collect()
}

/// Embeds every image listed in an image manifest, in manifest order.
pub fn embed_manifest(manifest_path: &Path, provider: &dyn EmbeddingProvider) -> Result<EmbeddingSet> {
    let manifest = ImageManifest::load(manifest_path)?;
    let images = manifest.entries.par_iter().map(|e| io::load_image(&e.path)).collect::<Result<Vec<_>>>()?;
    provider.embed(&prepare_for_embedding(&images)?)
}

/// Loads a target set given either as an image manifest (`.json`) or as an
/// embedding file.
pub fn load_target(path: &Path, provider: &dyn EmbeddingProvider) -> Result<EmbeddingSet> {
    if path.extension().is_some_and(|e| e == "json") {
        embed_manifest(path, provider)
    } else {
        fid::load_embeddings(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub noise_percent: f64,
    pub fid: f64,
    pub mpsd: f64,
    pub n_images: usize,
}

#[derive(Debug, Clone)]
pub struct LevelOutcome {
    pub result: LevelResult,
    pub evaluation: uq::Evaluation,
}

/// Output sets scored for FID: the first sample of every stack for MC
/// dropout, one set per model for ensembles.
fn fid_sets(kind: StackKind, stacks: &[&LoadedStack]) -> Result<Vec<Vec<Image>>> {
    match kind {
        StackKind::McDropout => Ok(vec![stacks.iter().map(|s| s.stack.samples()[0].clone()).collect()]),
        StackKind::Ensemble => {
            let models = stacks[0].stack.model_ids();
            models
                .iter()
                .map(|model| {
                    stacks
                        .iter()
                        .map(|s| {
                            let k = s.stack.model_ids().iter().position(|m| m == model).ok_or_else(|| {
                                Error::InvalidArgument(format!(
                                    "stack {} has no output from model {model}",
                                    s.stack.source_id()
                                ))
                            })?;
                            Ok(s.stack.samples()[k].clone())
                        })
                        .collect()
                })
                .collect()
        }
    }
}

/// FID and mPSD of one level's stacks against a fixed target set.
///
/// Stacks that fail to load or evaluate are skipped (and reported in the
/// outcome); FID uses exactly the stacks that contributed to mPSD.
pub fn collect_level(
    noise_percent: f64,
    stacks: &StackManifest,
    target: &EmbeddingSet,
    provider: &dyn EmbeddingProvider,
    opts: &UqOptions,
) -> Result<LevelOutcome> {
    if stacks.stacks.is_empty() {
        return Err(Error::InvalidArgument(format!("level {noise_percent}: no stacks")));
    }
    if provider.provider_id() != target.provider_id() {
        return Err(Error::ProviderMismatch { left: target.provider_id().to_string(), right: provider.provider_id() });
    }
    let loaded = uq::load_stacks(stacks, opts.align);
    let evaluation = uq::evaluate_loaded(stacks.kind, &loaded, opts)?;
    let mut used: Vec<&LoadedStack> = loaded
        .iter()
        .filter_map(|l| l.as_ref().ok())
        .filter(|l| evaluation.records.binary_search_by(|r| r.source_id.as_str().cmp(l.stack.source_id())).is_ok())
        .collect();
    used.sort_by(|a, b| a.stack.source_id().cmp(b.stack.source_id()));

    let sets = fid_sets(stacks.kind, &used)?;
    let fids = sets
        .iter()
        .map(|set| fid::fid_embeddings(target, &provider.embed(&prepare_for_embedding(set)?)?))
        .collect::<Result<Vec<_>>>()?;
    let fid = fids.iter().sum::<f64>() / fids.len() as f64;
    let result = LevelResult { noise_percent, fid, mpsd: evaluation.mpsd, n_images: evaluation.records.len() };
    Ok(LevelOutcome { result, evaluation })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub points: Vec<LevelResult>,
    pub pearson_fid_noise: Option<f64>,
    pub spearman_fid_noise: Option<f64>,
    pub pearson_fid_mpsd: Option<f64>,
    pub spearman_fid_mpsd: Option<f64>,
    /// Consecutive `[from, to]` noise levels over which FID does not increase.
    pub non_monotone_fid: Vec<[f64; 2]>,
    /// Statistics that could not be computed, with the reason.
    pub correlation_errors: BTreeMap<String, String>,
}

/// Assembles the curve and its four correlation statistics. Undefined
/// statistics are left empty and explained in `correlation_errors`.
pub fn build_curve(levels: &[LevelResult]) -> Result<CalibrationCurve> {
    if levels.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 levels, got {}", levels.len())));
    }
    let noise: Vec<f64> = levels.iter().map(|l| l.noise_percent).collect();
    validate_levels(&noise)?;
    if levels.iter().any(|l| l.n_images != levels[0].n_images) {
        return Err(Error::InvalidArgument("levels were evaluated on different numbers of images".into()));
    }
    let fid: Vec<f64> = levels.iter().map(|l| l.fid).collect();
    let mpsd: Vec<f64> = levels.iter().map(|l| l.mpsd).collect();

    let mut errors = BTreeMap::new();
    let mut stat = |name: &str, r: Result<f64>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("{name}: {e}");
            errors.insert(name.to_string(), e.to_string());
            None
        }
    };
    let pearson_fid_noise = stat("pearson_fid_noise", pearson(&fid, &noise));
    let spearman_fid_noise = stat("spearman_fid_noise", spearman(&fid, &noise));
    let pearson_fid_mpsd = stat("pearson_fid_mpsd", pearson(&fid, &mpsd));
    let spearman_fid_mpsd = stat("spearman_fid_mpsd", spearman(&fid, &mpsd));

    let non_monotone_fid = levels
        .windows(2)
        .filter(|w| w[1].fid <= w[0].fid)
        .map(|w| [w[0].noise_percent, w[1].noise_percent])
        .collect();
    Ok(CalibrationCurve {
        points: levels.to_vec(),
        pearson_fid_noise,
        spearman_fid_noise,
        pearson_fid_mpsd,
        spearman_fid_mpsd,
        non_monotone_fid,
        correlation_errors: errors,
    })
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub curve: CalibrationCurve,
    pub outcomes: Vec<LevelOutcome>,
}

/// Runs [`collect_level`] for every level (concurrently) and joins the
/// results into a curve. `stack_manifests[i]` holds the outputs for
/// `cfg.noise_levels[i]`.
pub fn calibrate(cfg: &SweepConfig, stack_manifests: &[PathBuf], target: &Path) -> Result<Calibration> {
    cfg.validate()?;
    if stack_manifests.len() != cfg.noise_levels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} stack manifests for {} noise levels",
            stack_manifests.len(),
            cfg.noise_levels.len()
        )));
    }
    let provider = cfg.provider()?;
    let target = load_target(target, &provider)?;
    let opts = cfg.uq_options();
    let outcomes = cfg
        .noise_levels
        .par_iter()
        .zip(stack_manifests)
        .map(|(&level, path)| collect_level(level, &StackManifest::load(path)?, &target, &provider, &opts))
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<LevelResult> = outcomes.iter().map(|o| o.result.clone()).collect();
    Ok(Calibration { curve: build_curve(&results)?, outcomes })
}

pub const CURVE_JSON: &str = "curve.json";

pub fn load_curve(path: &Path) -> Result<CalibrationCurve> {
    manifest::read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn level(noise: f64, fid: f64, mpsd: f64) -> LevelResult {
        LevelResult { noise_percent: noise, fid, mpsd, n_images: 3 }
    }

    #[test]
    fn level_validation() {
        assert!(validate_levels(&[0.0, 5.0, 10.0]).is_ok());
        assert!(validate_levels(&[10.0, 5.0]).is_err());
        assert!(validate_levels(&[0.0, 0.0]).is_err());
        assert!(validate_levels(&[-1.0, 5.0]).is_err());
        assert!(validate_levels(&[]).is_err());
        assert_eq!(level_dir_name(0.0), "level_0");
        assert_eq!(level_dir_name(2.5), "level_2.5");
    }

    #[test]
    fn perfectly_ordered_curve() {
        let curve = build_curve(&[level(0.0, 1.0, 0.1), level(5.0, 2.0, 0.2), level(10.0, 4.0, 0.3)]).unwrap();
        assert_eq!(curve.spearman_fid_noise, Some(1.0));
        assert_eq!(curve.spearman_fid_mpsd, Some(1.0));
        assert!(curve.pearson_fid_noise.unwrap() > 0.9);
        assert!(curve.non_monotone_fid.is_empty());
        assert!(curve.correlation_errors.is_empty());

        let linear = build_curve(&[level(0.0, 1.0, 0.1), level(5.0, 2.0, 0.2), level(10.0, 3.0, 0.3)]).unwrap();
        for r in [linear.pearson_fid_noise, linear.pearson_fid_mpsd, linear.spearman_fid_noise, linear.spearman_fid_mpsd]
        {
            assert!((r.unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_fid_surfaces_errors() {
        let curve = build_curve(&[level(0.0, 2.0, 0.1), level(5.0, 2.0, 0.2)]).unwrap();
        assert_eq!(curve.pearson_fid_noise, None);
        assert_eq!(curve.correlation_errors.len(), 4);
        assert_eq!(curve.non_monotone_fid, vec![[0.0, 5.0]]);
    }

    #[test]
    fn curve_rejections() {
        assert!(build_curve(&[level(0.0, 1.0, 0.1)]).is_err());
        assert!(build_curve(&[level(5.0, 1.0, 0.1), level(0.0, 2.0, 0.2)]).is_err());
        let mut uneven = level(5.0, 2.0, 0.2);
        uneven.n_images = 4;
        assert!(build_curve(&[level(0.0, 1.0, 0.1), uneven]).is_err());
    }

    #[test]
    fn curve_json_field_names() {
        let curve = build_curve(&[level(0.0, 1.0, 0.1), level(5.0, 2.0, 0.2)]).unwrap();
        let v = serde_json::to_value(&curve).unwrap();
        for key in ["points", "pearson_fid_noise", "spearman_fid_noise", "pearson_fid_mpsd", "spearman_fid_mpsd"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let p = &v["points"][0];
        for key in ["noise_percent", "fid", "mpsd", "n_images"] {
            assert!(p.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn sweep_config_defaults() {
        let cfg: SweepConfig =
            serde_json::from_str(r#"{"noise_levels":[0,10],"seed":3,"embedding_provider":"toy-area8x8"}"#).unwrap();
        assert_eq!(cfg.crop, 5);
        assert!(!cfg.align);
        assert!(cfg.provider().is_ok());
        let other = SweepConfig { embedding_provider: "inception-v3-pool3".into(), ..cfg };
        assert!(other.provider().is_err());
    }
}
