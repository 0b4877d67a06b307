//! Seeded synthetic images and the mock-translator calibration rig.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use nalgebra::DMatrix;
use uqih_core::fid::EmbeddingSet;
use uqih_core::manifest::{ImageEntry, ImageManifest, StackEntry, StackKind, StackManifest};
use uqih_core::protocol::SweepConfig;
use uqih_core::{io, rng, Image, Laterality, Photometric, RangeHint};

/// White Gaussian noise blurred with a circular Gaussian of width `sigma`,
/// stretched to [0, 1]. Periodic, so circular shifts stay on-texture.
pub fn texture(width: usize, height: usize, sigma: f64, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..width * height).map(|_| rng.sample(StandardNormal)).collect();
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let blur = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for r in 0..height {
            for c in 0..width {
                let mut acc = 0.0;
                for (k, d) in kernel.iter().zip(-radius..=radius) {
                    let (rr, cc) = if horizontal {
                        (r, (c as isize + d).rem_euclid(width as isize) as usize)
                    } else {
                        ((r as isize + d).rem_euclid(height as isize) as usize, c)
                    };
                    acc += k * src[rr * width + cc];
                }
                out[r * width + c] = acc;
            }
        }
        out
    };
    let smooth = blur(&blur(&noise, true), false);
    let lo = smooth.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = smooth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let data = smooth.iter().map(|v| (v - lo) / (hi - lo)).collect();
    Image::new(width, height, 1, data, RangeHint::Unit).unwrap()
}

/// Independent uniform values in [0, 1].
pub fn uniform_noise(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height).map(|_| rng.random::<f64>()).collect();
    Image::new(width, height, 1, data, RangeHint::Unit).unwrap()
}

/// `0.5 + 0.5·cos(2π(fx·x/width + fy·y/height))` with integer cycle counts.
pub fn sinusoid(width: usize, height: usize, cycles_x: f64, cycles_y: f64) -> Image {
    Image::from_fn(width, height, RangeHint::Unit, |r, c| {
        let phase = cycles_x * c as f64 / width as f64 + cycles_y * r as f64 / height as f64;
        0.5 + 0.5 * (2.0 * std::f64::consts::PI * phase).cos()
    })
    .unwrap()
}

/// Pixel-wise `(1 − t)·a + t·b`.
pub fn mix(a: &Image, b: &Image, t: f64) -> Image {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| (1.0 - t) * x + t * y).collect();
    Image::new(a.width(), a.height(), a.channels(), data, a.range_hint()).unwrap()
}

/// Random symmetric positive definite `d`×`d` matrix `B·Bᵀ/d + 0.1·I` with
/// standard-normal `B`.
pub fn spd_matrix(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = &b * b.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1;
    (&a + a.transpose()) * 0.5
}

/// `n` draws from `N(shift·1, I_d)` as an embedding set of `provider`.
pub fn gaussian_cloud(n: usize, d: usize, shift: f64, seed: u64, provider: &str) -> EmbeddingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrix = (0..n * d).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect();
    EmbeddingSet::new(n, d, matrix, provider).unwrap()
}

/// Saves `images` as raw tensors under `dir/images/` and writes
/// `dir/manifest.json` listing them with ids `{prefix}{index:04}`.
pub fn write_image_set(dir: &Path, prefix: &str, images: &[Image]) -> PathBuf {
    let entries = images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let id = format!("{prefix}{i:04}");
            let path = dir.join("images").join(format!("{id}.uqt"));
            io::save_raw_tensor(&path, img).unwrap();
            ImageEntry {
                source_id: id,
                path,
                photometric: Photometric::Unspecified,
                laterality: Laterality::Unspecified,
                pre_segmented: false,
            }
        })
        .collect();
    let manifest = dir.join("manifest.json");
    ImageManifest { entries }.save(&manifest).unwrap();
    manifest
}

#[derive(Debug, Clone)]
pub struct RigConfig {
    pub n_images: usize,
    pub side: usize,
    pub blur: f64,
    pub samples: usize,
    pub levels: Vec<f64>,
    pub seed: u64,
}

impl Default for RigConfig {
    fn default() -> Self {
        RigConfig { n_images: 200, side: 64, blur: 3.0, samples: 5, levels: vec![0.0, 5.0, 10.0, 15.0, 20.0], seed: 7 }
    }
}

#[derive(Debug, Clone)]
pub struct RigInputs {
    /// Source images `1 − template`.
    pub test_manifest: PathBuf,
    /// Independent draws from the template distribution.
    pub target_manifest: PathBuf,
    pub sweep_config: PathBuf,
}

/// Writes the rig's source test set, target set and sweep config under `dir`.
pub fn write_rig_inputs(dir: &Path, cfg: &RigConfig) -> RigInputs {
    let n = cfg.n_images;
    let templates: Vec<Image> =
        (0..n).map(|i| texture(cfg.side, cfg.side, cfg.blur, cfg.seed.wrapping_mul(1000) + i as u64)).collect();
    let sources: Vec<Image> =
        templates.iter().map(|t| t.map(RangeHint::Unit, |v| 1.0 - v).unwrap()).collect();
    let targets: Vec<Image> = (0..n)
        .map(|i| texture(cfg.side, cfg.side, cfg.blur, cfg.seed.wrapping_mul(1000) + 500_000 + i as u64))
        .collect();
    let test_manifest = write_image_set(&dir.join("test"), "img", &sources);
    let target_manifest = write_image_set(&dir.join("target"), "tgt", &targets);
    let sweep = SweepConfig { noise_levels: cfg.levels.clone(), seed: cfg.seed, ..SweepConfig::default() };
    let sweep_config = dir.join("sweep.json");
    uqih_core::manifest::write_json(&sweep_config, &sweep).unwrap();
    RigInputs { test_manifest, target_manifest, sweep_config }
}

/// Per-sample perturbation amplitude of the mock translator at `level`.
pub fn rig_alpha(level: f64) -> f64 {
    0.01 + 0.01 * level
}

/// Mock model: maps a noisy 0–255 source `x̃` to `1 − x̃/255 + α(ℓ)·ξ_m` for
/// `samples` independent standard-normal fields `ξ_m`, and writes the stacks
/// plus `stacks.json` under `out_dir`. Returns the stack manifest path.
pub fn mock_translate(
    level_manifest: &Path,
    level: f64,
    samples: usize,
    kind: StackKind,
    seed: u64,
    out_dir: &Path,
) -> PathBuf {
    let manifest = ImageManifest::load(level_manifest).unwrap();
    let alpha = rig_alpha(level);
    let stacks = manifest
        .entries
        .iter()
        .map(|entry| {
            let src = io::load_image(&entry.path).unwrap();
            let sample_paths = (0..samples)
                .map(|m| {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(rng::derive_seed(seed, &format!("{}/{m}", entry.source_id), level));
                    let data = src
                        .data()
                        .iter()
                        .map(|&x| 1.0 - x / 255.0 + alpha * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let out = Image::new(src.width(), src.height(), 1, data, RangeHint::Unspecified).unwrap();
                    let path = out_dir.join("samples").join(format!("{}_{m}.uqt", entry.source_id));
                    io::save_raw_tensor(&path, &out).unwrap();
                    path
                })
                .collect();
            StackEntry {
                source_id: entry.source_id.clone(),
                source_path: entry.path.clone(),
                sample_paths,
                model_ids: (kind == StackKind::Ensemble).then(|| (0..samples).map(|m| format!("model{m}")).collect()),
            }
        })
        .collect();
    let path = out_dir.join("stacks.json");
    StackManifest { kind, stacks }.save(&path).unwrap();
    path
}

/// Stack manifest whose every sample is a copy of the corresponding image in
/// `images_manifest`.
pub fn copy_stacks(images_manifest: &Path, samples: usize, kind: StackKind, out_path: &Path) -> PathBuf {
    let manifest = ImageManifest::load(images_manifest).unwrap();
    let stacks = manifest
        .entries
        .iter()
        .map(|e| StackEntry {
            source_id: e.source_id.clone(),
            source_path: e.path.clone(),
            sample_paths: vec![e.path.clone(); samples],
            model_ids: (kind == StackKind::Ensemble).then(|| (0..samples).map(|m| format!("model{m}")).collect()),
        })
        .collect();
    StackManifest { kind, stacks }.save(out_path).unwrap();
    out_path.to_path_buf()
}
