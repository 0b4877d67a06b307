//! Two-dimensional FFT over row-major complex grids, built on `rustfft`.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// In-place unnormalised 2-D DFT of a `width`×`height` row-major grid.
///
/// The inverse transform is scaled by `1 / (width * height)` so that
/// `fft2(Inverse) ∘ fft2(Forward)` is the identity.
pub fn fft2(data: &mut [Complex64], width: usize, height: usize, direction: Direction) {
    assert_eq!(data.len(), width * height, "fft2 buffer size");
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = match direction {
        Direction::Forward => (planner.plan_fft_forward(width), planner.plan_fft_forward(height)),
        Direction::Inverse => (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height)),
    };
    row_fft.process(data);

    let mut column = vec![Complex64::default(); height];
    for c in 0..width {
        for r in 0..height {
            column[r] = data[r * width + c];
        }
        col_fft.process(&mut column);
        for r in 0..height {
            data[r * width + c] = column[r];
        }
    }

    if direction == Direction::Inverse {
        let scale = 1.0 / (width * height) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

pub fn forward_real(values: &[f64], width: usize, height: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut buf, width, height, Direction::Forward);
    buf
}

/// Signed frequency index of DFT bin `k` out of `n` (`k` for `k < n/2`, else `k - n`).
#[inline]
pub fn signed_freq(k: usize, n: usize) -> isize {
    if k < n.div_ceil(2) {
        k as isize
    } else {
        k as isize - n as isize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_dc() {
        let values: Vec<f64> = (0..12).map(|i| (i * i) as f64 * 0.5 - 3.0).collect();
        let mut buf = forward_real(&values, 4, 3);
        assert!((buf[0].re - values.iter().sum::<f64>()).abs() < 1e-12);
        fft2(&mut buf, 4, 3, Direction::Inverse);
        for (a, b) in buf.iter().zip(&values) {
            assert!((a.re - b).abs() < 1e-12 && a.im.abs() < 1e-12);
        }
    }

    #[test]
    fn signed_frequencies() {
        assert_eq!((0..4).map(|k| signed_freq(k, 4)).collect::<Vec<_>>(), vec![0, 1, -2, -1]);
        assert_eq!((0..5).map(|k| signed_freq(k, 5)).collect::<Vec<_>>(), vec![0, 1, 2, -2, -1]);
    }
}
