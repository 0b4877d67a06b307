//! Reference implementations written straight from the textbook
//! definitions. They are slow and share no code with `uqih-core`.

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use uqih_core::Image;

/// Otsu by exhaustive search in exact rational arithmetic: maximise
/// `w0·w1·(μ0 − μ1)²` over every edge `k` (class 0 = bins `< k`), keeping the
/// first maximum.
pub fn otsu_bin_exhaustive(hist: &[u64]) -> Option<usize> {
    let big = |v: u64| BigRational::from_integer(BigInt::from(v));
    let total: u64 = hist.iter().sum();
    let mut best: Option<(usize, BigRational)> = None;
    for k in 1..hist.len() {
        let n0: u64 = hist[..k].iter().sum();
        let n1: u64 = hist[k..].iter().sum();
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s0: u64 = hist[..k].iter().enumerate().map(|(i, &h)| i as u64 * h).sum();
        let s1: u64 = hist[k..].iter().enumerate().map(|(i, &h)| (i + k) as u64 * h).sum();
        let w0 = big(n0) / big(total);
        let w1 = big(n1) / big(total);
        let diff = big(s0) / big(n0) - big(s1) / big(n1);
        let between = w0 * w1 * diff.clone() * diff;
        if best.as_ref().is_none_or(|(_, b)| between > *b) {
            best = Some((k, between));
        }
    }
    best.map(|(k, _)| k)
}

/// Matrix square root by the coupled Newton–Schulz iteration.
pub fn sqrtm_newton_schulz(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.norm();
    if norm == 0.0 {
        return DMatrix::zeros(n, n);
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let mut y = a / norm;
    let mut z = eye.clone();
    for _ in 0..500 {
        let t = (&eye * 3.0 - &z * &y) * 0.5;
        let next = &y * &t;
        z = &t * &z;
        let delta = (&next - &y).norm();
        y = next;
        if delta < 1e-15 * y.norm() {
            break;
        }
    }
    y * norm.sqrt()
}

/// Column means and unbiased covariance of row-major observations.
pub fn mean_cov(rows: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mean[j] += r[j];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let s: f64 = rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum();
            cov[(i, j)] = s / (n as f64 - 1.0);
        }
    }
    (mean, cov)
}

/// Fréchet distance via the eigenvalues of `Σ1·Σ2`:
/// `‖μ1 − μ2‖² + tr Σ1 + tr Σ2 − 2 Σ √λᵢ(Σ1Σ2)`.
pub fn frechet_eigen(mu1: &[f64], cov1: &DMatrix<f64>, mu2: &[f64], cov2: &DMatrix<f64>) -> f64 {
    let dmu: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b).powi(2)).sum();
    let product = cov1 * cov2;
    let root_trace: f64 = product.complex_eigenvalues().iter().map(|l| l.re.max(0.0).sqrt()).sum();
    dmu + cov1.trace() + cov2.trace() - 2.0 * root_trace
}

/// Per-pixel population standard deviation of equally sized sample vectors.
pub fn pixel_std(samples: &[Vec<f64>]) -> Vec<f64> {
    let m = samples.len() as f64;
    (0..samples[0].len())
        .map(|i| {
            let mut mean = 0.0;
            for s in samples {
                mean += s[i];
            }
            mean /= m;
            let mut var = 0.0;
            for s in samples {
                var += (s[i] - mean) * (s[i] - mean);
            }
            (var / m).sqrt()
        })
        .collect()
}

/// Pearson correlation, covariance over the product of standard deviations.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
    let sx = (xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n).sqrt();
    cov / (sx * sy)
}

/// Average ranks by counting: `1 + #less + (#equal − 1)/2`.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|x| {
            let less = xs.iter().filter(|y| *y < x).count() as f64;
            let equal = xs.iter().filter(|y| *y == x).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5) over valid window
/// positions, for single-channel images on a 0–255 scale.
pub fn ssim(a: &Image, b: &Image) -> f64 {
    const R: usize = 5;
    let sigma = 1.5f64;
    let mut kernel = [[0.0f64; 2 * R + 1]; 2 * R + 1];
    let mut total = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, k) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - R as f64, j as f64 - R as f64);
            *k = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += *k;
        }
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let (w, h) = (a.width(), a.height());
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in R..h - R {
        for c in R..w - R {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, row) in kernel.iter().enumerate() {
                for (j, &k) in row.iter().enumerate() {
                    let k = k / total;
                    let x = a.get(r + i - R, c + j - R, 0);
                    let y = b.get(r + i - R, c + j - R, 0);
                    ma += k * x;
                    mb += k * y;
                    saa += k * x * x;
                    sbb += k * y * y;
                    sab += k * x * y;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}

/// Share of a real sinusoid's band energy captured by each of `k`
/// orientation subbands, for a wave vector at angle `theta`.
///
/// Steerable lobes are `cos^(k−1)` of the angle to their centre `πb/k`, so the
/// energy in lobe `b` is proportional to `cos^(2(k−1))` of that angle, taken
/// modulo π because a real sinusoid has energy at `±ω`.
pub fn orientation_energy_shares(theta: f64, k: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    let raw: Vec<f64> = (0..k)
        .map(|b| {
            let centre = PI * b as f64 / k as f64;
            let d = (theta - centre + PI / 2.0).rem_euclid(PI) - PI / 2.0;
            d.cos().powi(2 * (k as i32 - 1))
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

/// Expected CW-SSIM local index between two independent white-noise images,
/// for one analytic steerable subband observed through a `window`² window.
///
/// The subband filter is rebuilt from its definition on a `side`² grid
/// (raised-cosine radial bump between the first two octave edges below
/// Nyquist, `cos^(k−1)` angular lobe on one half plane), its autocorrelation
/// gives the coefficient covariance inside a window, and the index
/// `2|aᴴb| / (‖a‖² + ‖b‖²)` is averaged over `draws` pairs of independent
/// circular complex Gaussian windows with that covariance.
pub fn independent_band_index(side: usize, k: usize, orientation: usize, window: usize, draws: usize, seed: u64) -> f64 {
    use nalgebra::Complex;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::{FRAC_PI_2, PI};

    let freq = |i: usize| {
        let s = if i < side.div_ceil(2) { i as f64 } else { i as f64 - side as f64 };
        s / (side as f64 / 2.0)
    };
    let order = (k - 1) as i32;
    let centre = PI * orientation as f64 / k as f64;
    let mut power = Vec::with_capacity(side * side);
    for ky in 0..side {
        for kx in 0..side {
            let (fy, fx) = (freq(ky), freq(kx));
            let r = (fx * fx + fy * fy).sqrt();
            if r == 0.0 {
                power.push((0.0, 0.0, 0.0));
                continue;
            }
            let l = r.log2();
            let low = (FRAC_PI_2 * (l + 1.0).clamp(0.0, 1.0)).cos();
            let high = (FRAC_PI_2 * (l + 2.0).clamp(0.0, 1.0)).sin();
            let mut d = (fy.atan2(fx) - centre).rem_euclid(2.0 * PI);
            if d > PI {
                d -= 2.0 * PI;
            }
            let ang = if d.abs() < FRAC_PI_2 { d.cos().powi(order) } else { 0.0 };
            power.push(((low * high * ang).powi(2), fx * PI, fy * PI));
        }
    }
    // autocorrelation at integer lags, by direct summation over frequencies
    let span = window as isize - 1;
    let mut acf = std::collections::HashMap::new();
    for dy in -span..=span {
        for dx in -span..=span {
            let mut acc = Complex::new(0.0, 0.0);
            for &(p, wx, wy) in &power {
                if p > 0.0 {
                    let phase = wx * dx as f64 + wy * dy as f64;
                    acc += Complex::new(phase.cos(), phase.sin()) * p;
                }
            }
            acf.insert((dy, dx), acc);
        }
    }
    let n = window * window;
    let pos: Vec<(isize, isize)> =
        (0..window).flat_map(|r| (0..window).map(move |c| (r as isize, c as isize))).collect();
    let cov = DMatrix::from_fn(n, n, |i, j| acf[&(pos[i].0 - pos[j].0, pos[i].1 - pos[j].1)]);
    let eig = nalgebra::SymmetricEigen::new(cov);
    let root = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt());

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        let z = nalgebra::DVector::from_fn(n, |_, _| {
            Complex::new(rng.sample::<f64, _>(rand_distr::StandardNormal), rng.sample::<f64, _>(rand_distr::StandardNormal))
        });
        &root * z
    };
    let mut total = 0.0;
    for _ in 0..draws {
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let cross: Complex<f64> = a.iter().zip(b.iter()).map(|(x, y)| x * y.conj()).sum();
        total += 2.0 * cross.norm() / (a.norm_squared() + b.norm_squared());
    }
    total / draws as f64
}
