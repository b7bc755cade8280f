//! Small 2-D FFT helpers over row-major, x-fastest arrays.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Unnormalized forward or inverse 2-D DFT, in place. Layout `[ky][kx]`.
pub(crate) fn fft2_in_place(data: &mut [Complex64], nx: usize, ny: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (fx, fy) = if inverse {
        (planner.plan_fft_inverse(nx), planner.plan_fft_inverse(ny))
    } else {
        (planner.plan_fft_forward(nx), planner.plan_fft_forward(ny))
    };
    fx.process(data);
    let mut col = vec![Complex64::new(0.0, 0.0); ny];
    for i in 0..nx {
        for j in 0..ny {
            col[j] = data[j * nx + i];
        }
        fy.process(&mut col);
        for j in 0..ny {
            data[j * nx + i] = col[j];
        }
    }
}

pub(crate) fn fft2_real(values: &[f64], nx: usize, ny: usize) -> Vec<Complex64> {
    let mut d: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut d, nx, ny, false);
    d
}

/// Signed integer wavenumber of DFT index `k` on `n` points.
pub(crate) fn signed_wavenumber(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}
