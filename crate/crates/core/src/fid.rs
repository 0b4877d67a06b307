//! Fréchet distance between Gaussian fits of image embeddings (FID).
//!
//! Embeddings come either from a built-in [`ToyEmbedder`] (area-averaged 8×8
//! thumbnails, optionally randomly projected) or from embedding files written
//! by an external feature extractor. Sets are only comparable when their
//! `provider_id`s match.
//!
//! Embedding file layout:
//!
//! ```text
//! magic   16 bytes  "UQIH-EMBED\0\0\0\0\0\0"
//! hlen     4 bytes  little-endian u32
//! header  hlen      {"n":int,"d":int,"provider_id":string,"dtype":"f32le"}
//! payload n*d*4     f32 little-endian, row-major
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io;

pub const EMBED_MAGIC: &[u8; 16] = b"UQIH-EMBED\0\0\0\0\0\0";

/// Side of the toy embedder's thumbnail; embeddings have `THUMB * THUMB` features.
pub const THUMB: usize = 8;

/// Rows per partial sum in the covariance reduction. Fixed so results do not
/// depend on the thread count.
const REDUCE_CHUNK: usize = 128;

/// `n` feature vectors of dimension `d`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    n: usize,
    d: usize,
    matrix: Vec<f64>,
    provider_id: String,
}

impl EmbeddingSet {
    pub fn new(n: usize, d: usize, matrix: Vec<f64>, provider_id: impl Into<String>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidArgument(format!("embedding set {n}x{d} is empty")));
        }
        if n.checked_mul(d) != Some(matrix.len()) {
            return Err(Error::DimensionMismatch(format!(
                "embedding matrix has {} values, expected {n}x{d}",
                matrix.len()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite embedding value".into()));
        }
        Ok(EmbeddingSet { n, d, matrix, provider_id: provider_id.into() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.d..(i + 1) * self.d]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbedHeader {
    n: usize,
    d: usize,
    provider_id: String,
    dtype: String,
}

pub fn encode_embeddings(set: &EmbeddingSet) -> Vec<u8> {
    let header = EmbedHeader {
        n: set.n,
        d: set.d,
        provider_id: set.provider_id.clone(),
        dtype: io::DTYPE_F32LE.into(),
    };
    io::write_framed(EMBED_MAGIC, &header, &set.matrix)
}

/// Writes an embedding file. Values are stored as `f32`.
pub fn save_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    io::write_file(path, &encode_embeddings(set))
}

pub fn decode_embeddings(path: &Path, bytes: &[u8]) -> Result<EmbeddingSet> {
    let (header, payload): (EmbedHeader, _) = io::read_framed(path, bytes, EMBED_MAGIC)?;
    if header.dtype != io::DTYPE_F32LE {
        return Err(Error::UnsupportedFormat(format!("dtype {}", header.dtype)));
    }
    if header.n < 2 {
        return Err(Error::malformed(path, format!("need n >= 2 embeddings, header says {}", header.n)));
    }
    if header.d == 0 {
        return Err(Error::malformed(path, "d = 0"));
    }
    let count = header
        .n
        .checked_mul(header.d)
        .ok_or_else(|| Error::malformed(path, "dimension overflow"))?;
    let matrix = io::decode_f32_payload(path, payload, count)?;
    EmbeddingSet::new(header.n, header.d, matrix, header.provider_id)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(path, &bytes)
}

/// Source of feature vectors for FID.
pub trait EmbeddingProvider: Sync {
    fn provider_id(&self) -> String;
    fn embed(&self, images: &[Image]) -> Result<EmbeddingSet>;
}

/// Desk-scale stand-in for a neural feature extractor: each image is
/// area-averaged to an 8×8 thumbnail and flattened, then optionally mapped
/// through a seeded random orthonormal projection.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ToyEmbedder {
    pub target_dim: Option<usize>,
    pub seed: u64,
}

/// Area-weighted resampling of one axis from `n` samples to `m` cells.
fn area_weights(n: usize, m: usize) -> Vec<Vec<(usize, f64)>> {
    (0..m)
        .map(|i| {
            let lo = i as f64 * n as f64 / m as f64;
            let hi = (i + 1) as f64 * n as f64 / m as f64;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n);
            (first..last)
                .filter_map(|p| {
                    let w = (hi.min(p as f64 + 1.0) - lo.max(p as f64)) / (hi - lo);
                    (w > 0.0).then_some((p, w))
                })
                .collect()
        })
        .collect()
}

/// Area-average downsampling of a single-channel image to `THUMB`×`THUMB`.
pub fn thumbnail(img: &Image) -> Vec<f64> {
    let rows = area_weights(img.height(), THUMB);
    let cols = area_weights(img.width(), THUMB);
    let mut out = Vec::with_capacity(THUMB * THUMB);
    for rw in &rows {
        for cw in &cols {
            let mut acc = 0.0;
            for &(r, wr) in rw {
                for &(c, wc) in cw {
                    acc += wr * wc * img.get(r, c, 0);
                }
            }
            out.push(acc);
        }
    }
    out
}

impl ToyEmbedder {
    /// Inverse of [`EmbeddingProvider::provider_id`] for toy embedders.
    pub fn from_provider_id(id: &str) -> Option<ToyEmbedder> {
        if id == "toy-area8x8" {
            return Some(ToyEmbedder::default());
        }
        let rest = id.strip_prefix("toy-area8x8-proj")?;
        let (d, seed) = rest.split_once("-seed")?;
        let embedder = ToyEmbedder { target_dim: Some(d.parse().ok()?), seed: seed.parse().ok()? };
        // reject non-canonical spellings such as leading zeros
        (embedder.provider_id() == id).then_some(embedder)
    }

    /// `THUMB²`×`target_dim` matrix with orthonormal columns.
    fn projection(&self, target_dim: usize) -> DMatrix<f64> {
        let full = THUMB * THUMB;
        let mut rng = crate::rng::seeded(self.seed);
        let gaussian = DMatrix::from_fn(full, target_dim, |_, _| StandardNormal.sample(&mut rng));
        gaussian.qr().q()
    }
}

impl EmbeddingProvider for ToyEmbedder {
    fn provider_id(&self) -> String {
        match self.target_dim {
            None => "toy-area8x8".to_string(),
            Some(d) => format!("toy-area8x8-proj{d}-seed{}", self.seed),
        }
    }

    fn embed(&self, images: &[Image]) -> Result<EmbeddingSet> {
        let first = images.first().ok_or_else(|| Error::InvalidArgument("no images to embed".into()))?;
        if let Some(bad) = images.iter().find(|im| !im.same_shape(first)) {
            return Err(Error::DimensionMismatch(format!(
                "embed_toy: {}x{}x{} vs {}x{}x{}",
                bad.width(),
                bad.height(),
                bad.channels(),
                first.width(),
                first.height(),
                first.channels()
            )));
        }
        if first.channels() != 1 {
            return Err(Error::InvalidArgument("embed_toy expects single-channel images".into()));
        }
        if first.width() < THUMB || first.height() < THUMB {
            return Err(Error::InvalidArgument(format!("embed_toy needs images of at least {THUMB}x{THUMB}")));
        }
        let full = THUMB * THUMB;
        let thumbs: Vec<Vec<f64>> = images.par_iter().map(thumbnail).collect();
        let (d, matrix) = match self.target_dim {
            None => (full, thumbs.concat()),
            Some(d) => {
                if d == 0 || d > full {
                    return Err(Error::InvalidArgument(format!("target_dim must be in 1..={full}, got {d}")));
                }
                let q = self.projection(d);
                let mut matrix = Vec::with_capacity(thumbs.len() * d);
                for t in &thumbs {
                    let row = DVector::from_column_slice(t).transpose() * &q;
                    matrix.extend(row.iter().copied());
                }
                (d, matrix)
            }
        };
        EmbeddingSet::new(images.len(), d, matrix, self.provider_id())
    }
}

/// Mean vector and covariance matrix of an embedding set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    /// Validates symmetry (10⁻¹² relative) and positive semi-definiteness
    /// (eigenvalues ≥ −10⁻⁸·max(1, ‖cov‖)).
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!("mean of length {d} with cov {:?}", cov.shape())));
        }
        let norm = cov.norm();
        if (&cov - cov.transpose()).norm() > 1e-12 * norm.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidArgument("covariance is not symmetric".into()));
        }
        let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if min_eig < -1e-8 * norm.max(1.0) {
            return Err(Error::InvalidArgument(format!("covariance has eigenvalue {min_eig}")));
        }
        Ok(GaussianStats { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Column means and unbiased (n − 1) covariance, symmetrised.
pub fn fit_gaussian(set: &EmbeddingSet) -> Result<GaussianStats> {
    let (n, d) = (set.n, set.d);
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 embeddings, got {n}")));
    }
    let partial_sums: Vec<Vec<f64>> = set
        .matrix
        .par_chunks(REDUCE_CHUNK * d)
        .map(|chunk| {
            let mut acc = vec![0.0; d];
            for row in chunk.chunks_exact(d) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            acc
        })
        .collect();
    let mut mean = vec![0.0; d];
    for part in &partial_sums {
        for (m, p) in mean.iter_mut().zip(part) {
            *m += p;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let partial_cov: Vec<Vec<f64>> = set
        .matrix
        .par_chunks(REDUCE_CHUNK * d)
        .map(|chunk| {
            let mut acc = vec![0.0; d * d];
            let mut centered = vec![0.0; d];
            for row in chunk.chunks_exact(d) {
                for ((c, v), m) in centered.iter_mut().zip(row).zip(&mean) {
                    *c = v - m;
                }
                for i in 0..d {
                    let ci = centered[i];
                    for j in i..d {
                        acc[i * d + j] += ci * centered[j];
                    }
                }
            }
            acc
        })
        .collect();
    let mut upper = vec![0.0; d * d];
    for part in &partial_cov {
        for (u, p) in upper.iter_mut().zip(part) {
            *u += p;
        }
    }
    let denom = (n - 1) as f64;
    let cov = DMatrix::from_fn(d, d, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        upper[a * d + b] / denom
    });
    Ok(GaussianStats { mean: DVector::from_vec(mean), cov: symmetrize(&cov) })
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Square root of a symmetric positive semi-definite matrix by symmetric
/// eigendecomposition, with slightly negative eigenvalues clamped to zero.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!("sqrtm of non-square {:?}", m.shape())));
    }
    let norm = m.norm();
    if (m - m.transpose()).norm() > 1e-10 * norm.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidArgument("sqrtm_psd input is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let scale = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if min < -1e-8 * scale {
        return Err(Error::Numerical(format!("sqrtm_psd input has eigenvalue {min} (scale {scale})")));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let s = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    Ok(symmetrize(&s))
}

/// Tolerance below zero that is attributed to roundoff and clamped.
pub const NEGATIVE_CLAMP: f64 = 1e-6;

/// Squared Fréchet distance `‖μa − μb‖² + Tr(Σa + Σb − 2(Σa^½ Σb Σa^½)^½)`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!("stats of dimension {} vs {}", a.dim(), b.dim())));
    }
    if a == b {
        return Ok(0.0);
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let root_a = sqrtm_psd(&a.cov)?;
    let inner = symmetrize(&(&root_a * &b.cov * &root_a));
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let value = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    if value < -NEGATIVE_CLAMP {
        return Err(Error::Numerical(format!("Fréchet distance evaluated to {value}")));
    }
    Ok(value.max(0.0))
}

/// One side of an FID comparison.
#[derive(Debug, Clone)]
pub enum FidInput {
    Images(Vec<Image>),
    Embeddings(EmbeddingSet),
}

impl FidInput {
    pub fn resolve(&self, provider: &dyn EmbeddingProvider) -> Result<EmbeddingSet> {
        match self {
            FidInput::Images(images) => provider.embed(images),
            FidInput::Embeddings(set) => Ok(set.clone()),
        }
    }
}

/// FID between two image sets (or precomputed embedding sets).
pub fn fid(real: &FidInput, generated: &FidInput, provider: &dyn EmbeddingProvider) -> Result<f64> {
    let a = real.resolve(provider)?;
    let b = generated.resolve(provider)?;
    fid_embeddings(&a, &b)
}

pub fn fid_embeddings(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64> {
    if a.provider_id != b.provider_id {
        return Err(Error::ProviderMismatch { left: a.provider_id.clone(), right: b.provider_id.clone() });
    }
    frechet_distance(&fit_gaussian(a)?, &fit_gaussian(b)?)
}
