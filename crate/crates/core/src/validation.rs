//! Estimators used to check generated fields and kernels against their
//! declared models.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::{fft, Kernel2D, MotionField};

/// A function of radial lag, one value per integer lag from 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialCurve {
    pub lags: Vec<f64>,
    pub values: Vec<f64>,
}

impl RadialCurve {
    /// Averages `f(|v|)` over the same lag vectors that the empirical
    /// estimator puts in each bin, so the two are directly comparable.
    pub fn from_model(max_lag: usize, f: impl Fn(f64) -> f64) -> Self {
        let bins = radial_bins(max_lag);
        let values = bins
            .iter()
            .map(|b| b.iter().map(|&(y, x)| f((y as f64).hypot(x as f64))).sum::<f64>() / b.len() as f64)
            .collect();
        Self { lags: (0..=max_lag).map(|l| l as f64).collect(), values }
    }

    pub fn max_lag(&self) -> usize {
        self.lags.len().saturating_sub(1)
    }

    /// Largest `|a - b| / |b|` over lags up to `max_lag`, against `reference`.
    pub fn max_relative_error(&self, reference: &Self, max_lag: usize) -> f64 {
        self.values
            .iter()
            .zip(&reference.values)
            .take(max_lag + 1)
            .map(|(a, b)| (a - b).abs() / b.abs())
            .fold(0.0, f64::max)
    }
}

/// Lag vectors `(dy, dx)` with `|v| <= max_lag`, grouped by `round(|v|)`.
pub fn radial_bins(max_lag: usize) -> Vec<Vec<(isize, isize)>> {
    let m = max_lag as isize;
    let mut bins = vec![Vec::new(); max_lag + 1];
    for dy in -m..=m {
        for dx in -m..=m {
            let r = (dy as f64).hypot(dx as f64);
            if r <= max_lag as f64 {
                bins[(r.round() as usize).min(max_lag)].push((dy, dx));
            }
        }
    }
    bins
}

fn padded_len(n: usize, lag: usize) -> usize {
    (n + lag).next_power_of_two()
}

/// Unbiased estimate of `E[e(p)^T e(p + v)]`: each lag is averaged over the
/// pixel pairs it has in every field, then over the ensemble, then radially
/// over lag vectors in 1 px bins.
pub fn empirical_autocorrelation(fields: &[MotionField], max_lag: usize) -> Result<RadialCurve> {
    ensure!(!fields.is_empty(), "need at least one field");
    let (h, w) = fields[0].dims();
    ensure!(fields.iter().all(|f| f.dims() == (h, w)), "fields must share dimensions");
    ensure!(
        2 * max_lag < h.min(w),
        "max lag {max_lag} must be below half the smallest dimension of {h}x{w}"
    );
    let (ph, pw) = (padded_len(h, max_lag), padded_len(w, max_lag));
    let side = 2 * max_lag + 1;

    // Sum over fields of sum_p e(p)^T e(p+v), for |dy|, |dx| <= max_lag.
    let total = fields
        .par_iter()
        .map(|f| {
            let mut buf = vec![Complex64::default(); ph * pw];
            for y in 0..h {
                for x in 0..w {
                    let (dx, dy) = f.at(y, x);
                    buf[y * pw + x] = Complex64::new(dx, dy);
                }
            }
            fft::forward(&mut buf, ph, pw);
            buf.iter_mut().for_each(|c| *c = Complex64::new(c.norm_sqr(), 0.0));
            fft::inverse(&mut buf, ph, pw);
            let m = max_lag as isize;
            let mut out = vec![0.0; side * side];
            for dy in -m..=m {
                let row = dy.rem_euclid(ph as isize) as usize * pw;
                for dx in -m..=m {
                    let col = dx.rem_euclid(pw as isize) as usize;
                    out[(dy + m) as usize * side + (dx + m) as usize] = buf[row + col].re;
                }
            }
            out
        })
        .reduce(|| vec![0.0; side * side], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());

    let m = max_lag as isize;
    let n = fields.len() as f64;
    let values = radial_bins(max_lag)
        .iter()
        .map(|bin| {
            bin.iter()
                .map(|&(dy, dx)| {
                    let pairs = ((h - dy.unsigned_abs()) * (w - dx.unsigned_abs())) as f64;
                    total[(dy + m) as usize * side + (dx + m) as usize] / (pairs * n)
                })
                .sum::<f64>()
                / bin.len() as f64
        })
        .collect();
    Ok(RadialCurve { lags: (0..=max_lag).map(|l| l as f64).collect(), values })
}

/// Sample statistics pooled over every pixel of every field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMoments {
    pub count: usize,
    /// Mean `(dx, dy)`.
    pub mean: [f64; 2],
    /// Population variance of each component.
    pub variance: [f64; 2],
    pub max_magnitude: f64,
}

pub fn field_moment_report(fields: &[MotionField]) -> Result<FieldMoments> {
    ensure!(!fields.is_empty(), "need at least one field");
    let count: usize = fields.iter().map(|f| f.dx().len()).sum();
    ensure!(count > 0, "fields are empty");
    let n = count as f64;
    let mean_of = |get: fn(&MotionField) -> &[f64]| fields.iter().flat_map(|f| get(f).iter()).sum::<f64>() / n;
    let mean = [mean_of(MotionField::dx), mean_of(MotionField::dy)];
    let var_of = |get: fn(&MotionField) -> &[f64], mu: f64| {
        fields.iter().flat_map(|f| get(f).iter()).map(|v| (v - mu).powi(2)).sum::<f64>() / n
    };
    Ok(FieldMoments {
        count,
        mean,
        variance: [var_of(MotionField::dx, mean[0]), var_of(MotionField::dy, mean[1])],
        max_magnitude: fields.iter().map(MotionField::max_magnitude).fold(0.0, f64::max),
    })
}

/// Statistics of one kernel. Positions are `(row, col)` offsets from the
/// kernel centre; moments are normalized by the tap sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelStats {
    pub side: usize,
    pub sum: f64,
    pub centroid: [f64; 2],
    /// Second central moment along rows and columns.
    pub second_moment: [f64; 2],
    pub negative_taps: usize,
}

pub fn kernel_report(kernels: &[Kernel2D]) -> Result<Vec<KernelStats>> {
    ensure!(!kernels.is_empty(), "need at least one kernel");
    Ok(kernels
        .iter()
        .map(|k| {
            let r = k.radius() as f64;
            let sum = k.sum();
            let (mut cy, mut cx) = (0.0, 0.0);
            for i in 0..k.side() {
                for j in 0..k.side() {
                    cy += k.at(i, j) * (i as f64 - r);
                    cx += k.at(i, j) * (j as f64 - r);
                }
            }
            let (cy, cx) = (cy / sum, cx / sum);
            let (mut vy, mut vx) = (0.0, 0.0);
            for i in 0..k.side() {
                for j in 0..k.side() {
                    vy += k.at(i, j) * (i as f64 - r - cy).powi(2);
                    vx += k.at(i, j) * (j as f64 - r - cx).powi(2);
                }
            }
            KernelStats {
                side: k.side(),
                sum,
                centroid: [cy, cx],
                second_moment: [vy / sum, vx / sum],
                negative_taps: k.weights().iter().filter(|w| **w < 0.0).count(),
            }
        })
        .collect())
}
