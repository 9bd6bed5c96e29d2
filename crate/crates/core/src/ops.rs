//! Convolution, warping, noise and resampling primitives.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::{fft, ImageBuffer, Kernel2D, MotionField, RandomSource};

/// Mirror index into `[0, n)` without repeating the edge sample
/// (`d c b | a b c d | c b a`). Valid for offsets up to `n - 1` past either end.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    j.clamp(0, n - 1) as usize
}

/// Frequency-domain convolution of one plane against kernels of a shared
/// radius. The padded image spectrum is computed once and reused.
pub(crate) struct PlaneSpectrum {
    h: usize,
    w: usize,
    r: usize,
    ph: usize,
    pw: usize,
    spectrum: Vec<Complex64>,
}

impl PlaneSpectrum {
    pub(crate) fn new(plane: &[f64], h: usize, w: usize, r: usize) -> Self {
        let (ph, pw) = (h + 2 * r, w + 2 * r);
        let mut padded = Vec::with_capacity(ph * pw);
        for y in 0..ph {
            let sy = reflect(y as isize - r as isize, h);
            for x in 0..pw {
                let sx = reflect(x as isize - r as isize, w);
                padded.push(Complex64::new(plane[sy * w + sx], 0.0));
            }
        }
        fft::forward(&mut padded, ph, pw);
        Self { h, w, r, ph, pw, spectrum: padded }
    }

    pub(crate) fn kernel_spectrum(&self, kernel: &Kernel2D) -> Vec<Complex64> {
        debug_assert_eq!(kernel.radius(), self.r);
        let (ph, pw, r) = (self.ph, self.pw, self.r);
        let mut buf = vec![Complex64::default(); ph * pw];
        let side = kernel.side();
        for i in 0..side {
            let y = (i + ph - r) % ph;
            for j in 0..side {
                let x = (j + pw - r) % pw;
                buf[y * pw + x] = Complex64::new(kernel.at(i, j), 0.0);
            }
        }
        fft::forward(&mut buf, ph, pw);
        buf
    }

    pub(crate) fn apply_spectrum(&self, kernel_spec: &[Complex64]) -> Vec<f64> {
        let mut prod: Vec<Complex64> =
            self.spectrum.iter().zip(kernel_spec).map(|(a, b)| a * b).collect();
        fft::inverse(&mut prod, self.ph, self.pw);
        let mut out = Vec::with_capacity(self.h * self.w);
        for y in 0..self.h {
            let row = (y + self.r) * self.pw + self.r;
            out.extend(prod[row..row + self.w].iter().map(|c| c.re));
        }
        out
    }

    pub(crate) fn apply(&self, kernel: &Kernel2D) -> Vec<f64> {
        self.apply_spectrum(&self.kernel_spectrum(kernel))
    }
}

pub(crate) fn check_kernel_fits(h: usize, w: usize, kernel: &Kernel2D) -> Result<()> {
    ensure!(
        kernel.side() <= h.min(w),
        "kernel side {} exceeds image size {h}x{w}",
        kernel.side()
    );
    Ok(())
}

/// Per-channel 2-D convolution with reflect padding, computed in the
/// frequency domain. Output has the input's dimensions.
pub fn convolve(img: &ImageBuffer, kernel: &Kernel2D) -> Result<ImageBuffer> {
    let (h, w) = img.dims();
    check_kernel_fits(h, w, kernel)?;
    if kernel.side() == 1 {
        let k = kernel.at(0, 0);
        return Ok(img.with_data(img.data().iter().map(|v| v * k).collect()));
    }
    Ok(img.map_planes(|p| PlaneSpectrum::new(p, h, w, kernel.radius()).apply(kernel)))
}

/// Reflect-padded convolution restricted to the window
/// `[y0, y0 + wh) x [x0, x0 + ww)`, evaluated directly in the spatial domain.
/// Agrees with [`convolve`] on that window.
pub(crate) fn convolve_window(
    plane: &[f64],
    h: usize,
    w: usize,
    kernel: &Kernel2D,
    (y0, x0): (usize, usize),
    (wh, ww): (usize, usize),
) -> Vec<f64> {
    let r = kernel.radius() as isize;
    let side = kernel.side();
    let mut out = vec![0.0; wh * ww];
    for wy in 0..wh {
        let y = (y0 + wy) as isize;
        for wx in 0..ww {
            let x = (x0 + wx) as isize;
            let mut acc = 0.0;
            for i in 0..side {
                let sy = reflect(y - (i as isize - r), h);
                let row = &plane[sy * w..(sy + 1) * w];
                for j in 0..side {
                    let sx = reflect(x - (j as isize - r), w);
                    acc += kernel.at(i, j) * row[sx];
                }
            }
            out[wy * ww + wx] = acc;
        }
    }
    out
}

/// Bilinear sample of a plane at a (clamped) real position.
#[inline]
pub(crate) fn sample_bilinear(plane: &[f64], h: usize, w: usize, sy: f64, sx: f64) -> f64 {
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    let a = plane[y0 * w + x0];
    if fx == 0.0 && fy == 0.0 {
        return a;
    }
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let b = plane[y0 * w + x1];
    let c = plane[y1 * w + x0];
    let d = plane[y1 * w + x1];
    (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d)
}

/// Backward warp with bilinear sampling: `out(p) = img(p - field(p))`.
/// Sample positions outside the image clamp to the border.
pub fn warp(img: &ImageBuffer, field: &MotionField) -> Result<ImageBuffer> {
    let (h, w) = img.dims();
    ensure!(
        field.dims() == (h, w),
        "field {}x{} does not match image {h}x{w}",
        field.height(),
        field.width()
    );
    let (dx, dy) = (field.dx(), field.dy());
    Ok(img.map_planes(|p| {
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                out.push(sample_bilinear(p, h, w, y as f64 - dy[i], x as f64 - dx[i]));
            }
        }
        out
    }))
}

/// Additive zero-mean Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    /// Standard deviation in intensity units.
    #[serde(default)]
    pub sigma: f64,
}

impl NoiseParams {
    pub const NONE: NoiseParams = NoiseParams { sigma: 0.0 };

    pub fn validate(&self) -> Result<()> {
        ensure!(self.sigma >= 0.0 && self.sigma.is_finite(), "noise sigma must be >= 0, got {}", self.sigma);
        Ok(())
    }
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self::NONE
    }
}

/// Adds i.i.d. Gaussian noise per sample. The result is not clipped.
pub fn add_noise(img: &ImageBuffer, params: NoiseParams, rng: &mut RandomSource) -> Result<ImageBuffer> {
    params.validate()?;
    if params.sigma == 0.0 {
        return Ok(img.clone());
    }
    Ok(img.with_data(img.data().iter().map(|v| v + params.sigma * rng.standard_normal()).collect()))
}

/// Bilinear resize using pixel-centre alignment.
pub fn resize_bilinear(img: &ImageBuffer, out_h: usize, out_w: usize) -> Result<ImageBuffer> {
    ensure!(out_h > 0 && out_w > 0, "resize target must be non-empty");
    let (h, w) = img.dims();
    if (out_h, out_w) == (h, w) {
        return Ok(img.clone());
    }
    let (sy, sx) = (h as f64 / out_h as f64, w as f64 / out_w as f64);
    let planes = img
        .planes()
        .map(|p| {
            let mut out = Vec::with_capacity(out_h * out_w);
            for y in 0..out_h {
                let fy = (y as f64 + 0.5) * sy - 0.5;
                for x in 0..out_w {
                    let fx = (x as f64 + 0.5) * sx - 0.5;
                    out.push(sample_bilinear(p, h, w, fy, fx));
                }
            }
            out
        })
        .collect();
    ImageBuffer::from_planes(out_h, out_w, planes)
}

/// Lowest supported down-sampling ratio.
pub const MIN_RESAMPLE_FACTOR: f64 = 0.125;

/// Bilinear down-sample by `factor`, then bilinear up-sample back to the
/// original size.
pub fn resample(img: &ImageBuffer, factor: f64) -> Result<ImageBuffer> {
    ensure!(
        (MIN_RESAMPLE_FACTOR..=1.0).contains(&factor),
        "resample factor must lie in [1/8, 1], got {factor}"
    );
    let (h, w) = img.dims();
    let dh = ((h as f64 * factor).round() as usize).max(1);
    let dw = ((w as f64 * factor).round() as usize).max(1);
    let small = resize_bilinear(img, dh, dw)?;
    resize_bilinear(&small, h, w)
}

/// Largest centred square crop.
pub fn center_crop_square(img: &ImageBuffer) -> ImageBuffer {
    let (h, w) = img.dims();
    let s = h.min(w);
    let (y0, x0) = ((h - s) / 2, (w - s) / 2);
    let planes = img
        .planes()
        .map(|p| {
            let mut out = Vec::with_capacity(s * s);
            for y in y0..y0 + s {
                out.extend_from_slice(&p[y * w + x0..y * w + x0 + s]);
            }
            out
        })
        .collect();
    ImageBuffer::from_planes(s, s, planes).expect("crop of a valid image")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::gaussian_kernel;
    use proptest::prelude::*;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> ImageBuffer {
        let mut rng = RandomSource::new(seed);
        ImageBuffer::new(h, w, c, (0..h * w * c).map(|_| rng.uniform()).collect()).unwrap()
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let img = random_image(16, 12, 3, 1);
        let out = convolve(&img, &Kernel2D::delta(5).unwrap()).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn constant_image_preserved() {
        let img = ImageBuffer::filled(20, 20, 1, 0.37);
        let out = convolve(&img, &gaussian_kernel(2.0, 9).unwrap()).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn oversized_kernel_rejected() {
        let img = ImageBuffer::zeros(8, 16, 1);
        assert!(convolve(&img, &Kernel2D::delta(9).unwrap()).is_err());
    }

    #[test]
    fn window_agrees_with_full() {
        let img = random_image(24, 20, 1, 3);
        let k = gaussian_kernel(1.7, 7).unwrap();
        let full = convolve(&img, &k).unwrap();
        let win = convolve_window(img.plane(0), 24, 20, &k, (0, 13), (9, 7));
        for y in 0..9 {
            for x in 0..7 {
                assert!((win[y * 7 + x] - full.get(0, y, 13 + x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_field_bit_identical() {
        let mut img = random_image(9, 7, 3, 5);
        img.set(0, 0, 0, -0.0);
        let out = warp(&img, &MotionField::zeros(9, 7)).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn unit_translation_of_ramp() {
        let img = ImageBuffer::from_fn(6, 10, |_, x| x as f64);
        let out = warp(&img, &MotionField::constant(6, 10, 1.0, 0.0)).unwrap();
        for y in 0..6 {
            for x in 1..10 {
                assert_eq!(out.get(0, y, x), (x - 1) as f64);
            }
            assert_eq!(out.get(0, y, 0), 0.0);
        }
    }

    #[test]
    fn warp_dimension_mismatch() {
        assert!(warp(&ImageBuffer::zeros(4, 4, 1), &MotionField::zeros(4, 5)).is_err());
    }

    #[test]
    fn noise_moments_and_determinism() {
        let img = ImageBuffer::zeros(64, 64, 1);
        let p = NoiseParams { sigma: 0.1 };
        let out = add_noise(&img, p, &mut RandomSource::new(11)).unwrap();
        let n = out.data().len() as f64;
        let mean = out.data().iter().sum::<f64>() / n;
        let std = (out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.01);
        assert!((std - 0.1).abs() < 0.01);

        let a = add_noise(&img, NoiseParams { sigma: 0.05 }, &mut RandomSource::new(7)).unwrap();
        let b = add_noise(&img, NoiseParams { sigma: 0.05 }, &mut RandomSource::new(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(add_noise(&img, NoiseParams::NONE, &mut RandomSource::new(7)).unwrap(), img);
        assert!(add_noise(&img, NoiseParams { sigma: -1.0 }, &mut RandomSource::new(7)).is_err());
    }

    fn laplacian_variance(img: &ImageBuffer) -> f64 {
        let (h, w) = img.dims();
        let mut vals = Vec::new();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let c = img.get(0, y, x);
                vals.push(img.get(0, y - 1, x) + img.get(0, y + 1, x) + img.get(0, y, x - 1) + img.get(0, y, x + 1) - 4.0 * c);
            }
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn resample_cases() {
        let img = random_image(32, 32, 3, 9);
        assert!(resample(&img, 1.0).unwrap().max_abs_diff(&img) < 1e-9);

        let flat = ImageBuffer::filled(32, 32, 1, 0.42);
        assert!(resample(&flat, 0.5).unwrap().data().iter().all(|v| (v - 0.42).abs() < 1e-12));

        let checker = ImageBuffer::from_fn(32, 32, |y, x| ((x + y) % 2) as f64);
        let down = resample(&checker, 0.125).unwrap();
        assert!(laplacian_variance(&down) < laplacian_variance(&checker));

        assert!(resample(&img, 0.1).is_err());
        assert!(resample(&img, 1.5).is_err());
    }

    #[test]
    fn crop_square() {
        let img = ImageBuffer::from_fn(4, 6, |y, x| (y * 10 + x) as f64);
        let c = center_crop_square(&img);
        assert_eq!(c.dims(), (4, 4));
        assert_eq!(c.get(0, 0, 0), 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn convolution_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let x = random_image(12, 10, 1, seed);
            let y = random_image(12, 10, 1, seed ^ 0xABCD);
            let k = gaussian_kernel(1.3, 5).unwrap();
            let combo = x.with_data(x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect());
            let lhs = convolve(&combo, &k).unwrap();
            let cx = convolve(&x, &k).unwrap();
            let cy = convolve(&y, &k).unwrap();
            let rhs = x.with_data(cx.data().iter().zip(cy.data()).map(|(p, q)| a * p + b * q).collect());
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-6);
        }

        #[test]
        fn warp_of_constant_is_constant(seed in any::<u64>(), c in 0.0f64..1.0) {
            let mut rng = RandomSource::new(seed);
            let img = ImageBuffer::filled(8, 8, 1, c);
            let dx: Vec<f64> = (0..64).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
            let dy: Vec<f64> = (0..64).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
            let out = warp(&img, &MotionField::new(8, 8, dx, dy).unwrap()).unwrap();
            prop_assert!(out.data().iter().all(|v| (v - c).abs() < 1e-12));
        }
    }
}
