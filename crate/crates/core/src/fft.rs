//! 2-D FFT helpers over row-major complex buffers.

use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_rows(buf: &mut [Complex64], width: usize, dir: FftDirection) {
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft(width, dir));
    plan.process(buf);
}

fn transpose(src: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); h * w];
    for y in 0..h {
        for x in 0..w {
            out[x * h + y] = src[y * w + x];
        }
    }
    out
}

fn fft2(buf: &mut Vec<Complex64>, h: usize, w: usize, dir: FftDirection) {
    debug_assert_eq!(buf.len(), h * w);
    fft_rows(buf, w, dir);
    let mut t = transpose(buf, h, w);
    fft_rows(&mut t, h, dir);
    *buf = transpose(&t, w, h);
}

/// Unnormalized forward transform (`exp(-i...)` kernel).
pub fn forward(buf: &mut Vec<Complex64>, h: usize, w: usize) {
    fft2(buf, h, w, FftDirection::Forward);
}

/// Inverse transform, normalized by `1/(h*w)`.
pub fn inverse(buf: &mut Vec<Complex64>, h: usize, w: usize) {
    fft2(buf, h, w, FftDirection::Inverse);
    let s = 1.0 / (h * w) as f64;
    buf.iter_mut().for_each(|v| *v *= s);
}

pub fn to_complex(re: &[f64]) -> Vec<Complex64> {
    re.iter().map(|&r| Complex64::new(r, 0.0)).collect()
}
