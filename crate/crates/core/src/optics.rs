//! Fourier-optics building blocks: Fried parameter, Zernike modes in Noll
//! ordering, Kolmogorov mode statistics and pupil-to-PSF synthesis.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{ensure, Result};
use crate::{fft, Kernel2D};

/// Fried parameter of a constant-`cn2` plane-wave path:
/// `r0 = (0.423 k^2 cn2 L)^(-3/5)` with `k = 2 pi / lambda`.
pub fn fried_parameter_plane_wave(wavelength: f64, cn2: f64, path_length: f64) -> Result<f64> {
    ensure!(cn2 > 0.0 && cn2.is_finite(), "cn2 must be positive for a finite r0, got {cn2}");
    ensure!(wavelength > 0.0 && path_length > 0.0, "wavelength and path length must be positive");
    let k = 2.0 * PI / wavelength;
    Ok((0.423 * k * k * cn2 * path_length).powf(-3.0 / 5.0))
}

/// Radial order `n` and signed azimuthal order `m` of Noll index `j >= 1`.
/// Positive `m` selects the cosine term, negative the sine term.
pub fn noll_to_nm(j: usize) -> Result<(u32, i32)> {
    ensure!(j >= 1, "Noll index starts at 1, got {j}");
    let mut n = 0usize;
    let mut rem = j - 1;
    while rem > n {
        n += 1;
        rem -= n;
    }
    let mag = (n % 2) + 2 * ((rem + (n + 1) % 2) / 2);
    let m = if j % 2 == 0 { mag as i32 } else { -(mag as i32) };
    Ok((n as u32, m))
}

/// A single Zernike polynomial with Noll normalization
/// (`(1/pi) * integral over the unit disk of Z_j^2 = 1`).
#[derive(Debug, Clone)]
pub struct Zernike {
    n: u32,
    m: i32,
    radial: Vec<(f64, i32)>,
    norm: f64,
}

impl Zernike {
    pub fn new(j: usize) -> Result<Self> {
        let (n, m) = noll_to_nm(j)?;
        let ma = m.unsigned_abs();
        let fact = |k: u32| -> f64 { (1..=k).map(f64::from).product() };
        let radial = (0..=(n - ma) / 2)
            .map(|k| {
                let c = fact(n - k) / (fact(k) * fact((n + ma) / 2 - k) * fact((n - ma) / 2 - k));
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                (sign * c, (n - 2 * k) as i32)
            })
            .collect();
        let norm = if m == 0 { f64::from(n + 1).sqrt() } else { (2.0 * f64::from(n + 1)).sqrt() };
        Ok(Self { n, m, radial, norm })
    }

    pub fn order(&self) -> (u32, i32) {
        (self.n, self.m)
    }

    /// Value at Cartesian pupil coordinates; the caller restricts to the disk.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let r = x.hypot(y);
        let radial: f64 = self.radial.iter().map(|(c, p)| c * r.powi(*p)).sum();
        let angular = match self.m {
            0 => 1.0,
            m if m > 0 => (f64::from(m) * y.atan2(x)).cos(),
            m => (f64::from(-m) * y.atan2(x)).sin(),
        };
        self.norm * radial * angular
    }
}

/// Cell-centred coordinate of sample `i` on an `n`-point grid spanning [-1, 1].
#[inline]
fn grid_coord(i: usize, n: usize) -> f64 {
    (2.0 * i as f64 + 1.0) / n as f64 - 1.0
}

/// Noll mode `j` sampled on an `n x n` cell-centred grid over `[-1, 1]^2`,
/// zero outside the unit disk. Row index is `y`, column index is `x`.
pub fn zernike_mode(j: usize, n: usize) -> Result<Vec<f64>> {
    ensure!(n >= 32, "unit-disk grid must have at least 32 samples per side, got {n}");
    let z = Zernike::new(j)?;
    let mut out = Vec::with_capacity(n * n);
    for iy in 0..n {
        let y = grid_coord(iy, n);
        for ix in 0..n {
            let x = grid_coord(ix, n);
            out.push(if x * x + y * y <= 1.0 { z.eval(x, y) } else { 0.0 });
        }
    }
    Ok(out)
}

/// Kolmogorov variance of a Noll coefficient of radial order `n`, in rad^2,
/// for unit `D / r0`.
pub fn noll_mode_variance(n: u32) -> f64 {
    // K = Gamma(14/3) [(24/5) Gamma(6/5)]^(5/6) Gamma(11/6)^2 / (2 pi^2)
    let k = gamma(14.0 / 3.0) * (24.0 / 5.0 * gamma(6.0 / 5.0)).powf(5.0 / 6.0) * gamma(11.0 / 6.0).powi(2)
        / (2.0 * PI * PI);
    let nf = f64::from(n);
    let ln = ln_gamma(nf - 5.0 / 6.0) - 2.0 * ln_gamma(17.0 / 6.0) - ln_gamma(nf + 23.0 / 6.0);
    k * (nf + 1.0) * ln.exp()
}

/// Optical train that maps the pupil onto detector pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagingSystem {
    pub aperture_diameter: f64,
    pub wavelength: f64,
    pub focal_length: f64,
    pub pixel_pitch: f64,
}

impl ImagingSystem {
    /// Nyquist-sampled detector: `pitch = lambda f / (2 D)`.
    pub fn nyquist(aperture_diameter: f64, wavelength: f64, focal_length: f64) -> Self {
        Self {
            aperture_diameter,
            wavelength,
            focal_length,
            pixel_pitch: wavelength * focal_length / (2.0 * aperture_diameter),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("aperture diameter", self.aperture_diameter),
            ("wavelength", self.wavelength),
            ("focal length", self.focal_length),
            ("pixel pitch", self.pixel_pitch),
        ] {
            ensure!(v > 0.0 && v.is_finite(), "{name} must be positive, got {v}");
        }
        Ok(())
    }

    /// Diffraction width `lambda f / D` in pixels (2 at Nyquist).
    pub fn sampling_ratio(&self) -> f64 {
        self.wavelength * self.focal_length / (self.aperture_diameter * self.pixel_pitch)
    }

    /// Angle subtended by one pixel, radians.
    pub fn pixel_angle(&self) -> f64 {
        self.pixel_pitch / self.focal_length
    }

    /// Image shift in pixels produced by a Noll tilt coefficient (radians).
    /// Z2 = 2x gives a wavefront slope of `4 a / D`, i.e. an angle
    /// `2 a lambda / (pi D)`.
    pub fn tilt_to_pixels(&self) -> f64 {
        2.0 * self.sampling_ratio() / PI
    }
}

/// Synthesizes PSFs from Zernike coefficients on a fixed pupil sampling.
///
/// Pupils are embedded in an `N x N` FFT grid. If the detector is coarser
/// than Nyquist, PSFs are formed on an odd-factor finer grid and binned.
#[derive(Debug, Clone)]
pub struct PsfGenerator {
    psf_side: usize,
    grid: usize,
    oversample: usize,
    aperture_samples: usize,
    /// Pupil sample offsets into the FFT grid that fall inside the disk.
    disk: Vec<usize>,
    /// `modes[k][d]`: Noll mode `k + 2` at disk sample `d`.
    modes: Vec<Vec<f64>>,
}

impl PsfGenerator {
    /// `num_modes` is the highest Noll index accepted in coefficient vectors,
    /// which start at Noll 2.
    pub fn new(system: &ImagingSystem, num_modes: usize, psf_side: usize, pupil_grid: usize) -> Result<Self> {
        system.validate()?;
        ensure!(psf_side % 2 == 1, "psf side must be odd, got {psf_side}");
        ensure!(num_modes >= 2, "need at least the tilt modes");
        ensure!(
            pupil_grid >= 4 * psf_side,
            "pupil grid {pupil_grid} undersamples a {psf_side}-pixel PSF (need >= {})",
            4 * psf_side
        );
        let q = system.sampling_ratio();
        let mut oversample = (2.0 / q).ceil().max(1.0) as usize;
        if oversample % 2 == 0 {
            oversample += 1;
        }
        ensure!(
            pupil_grid >= psf_side * oversample,
            "pupil grid {pupil_grid} too small for {oversample}x oversampled PSF"
        );
        let aperture_samples = (pupil_grid as f64 / (q * oversample as f64)).round() as usize;
        ensure!(
            (8..=pupil_grid).contains(&aperture_samples),
            "pupil sampling out of range: {aperture_samples} samples across the aperture on a {pupil_grid} grid"
        );

        let zs: Vec<Zernike> = (2..=num_modes).map(Zernike::new).collect::<Result<_>>()?;
        let off = (pupil_grid - aperture_samples) / 2;
        let mut disk = Vec::new();
        let mut modes = vec![Vec::new(); zs.len()];
        for iy in 0..aperture_samples {
            let y = grid_coord(iy, aperture_samples);
            for ix in 0..aperture_samples {
                let x = grid_coord(ix, aperture_samples);
                if x * x + y * y > 1.0 {
                    continue;
                }
                disk.push((iy + off) * pupil_grid + ix + off);
                for (m, z) in modes.iter_mut().zip(&zs) {
                    m.push(z.eval(x, y));
                }
            }
        }
        Ok(Self { psf_side, grid: pupil_grid, oversample, aperture_samples, disk, modes })
    }

    pub fn psf_side(&self) -> usize {
        self.psf_side
    }

    /// Number of coefficients accepted (Noll 2 through `num_modes`).
    pub fn num_coeffs(&self) -> usize {
        self.modes.len()
    }

    /// Realized diffraction width `lambda f / D` in detector pixels after
    /// rounding the aperture to whole pupil samples.
    pub fn effective_sampling(&self) -> f64 {
        self.grid as f64 / (self.aperture_samples * self.oversample) as f64
    }

    /// PSF for the given coefficients (radians, Noll 2 upward; missing
    /// trailing coefficients are zero). Non-negative, sums to one.
    pub fn psf(&self, coeffs: &[f64]) -> Result<Kernel2D> {
        ensure!(
            coeffs.len() <= self.modes.len(),
            "{} coefficients exceed the {} configured modes",
            coeffs.len(),
            self.modes.len()
        );
        ensure!(coeffs.iter().all(|c| c.is_finite()), "coefficients must be finite");
        let n = self.grid;
        let mut buf = vec![Complex64::default(); n * n];
        for (d, &idx) in self.disk.iter().enumerate() {
            let phase: f64 = coeffs.iter().zip(&self.modes).map(|(a, m)| a * m[d]).sum();
            buf[idx] = Complex64::from_polar(1.0, phase);
        }
        fft::forward(&mut buf, n, n);

        let fine = self.psf_side * self.oversample;
        let half = (fine / 2) as isize;
        let ov = self.oversample;
        let mut taps = vec![0.0; self.psf_side * self.psf_side];
        for fy in 0..fine {
            let sy = (fy as isize - half).rem_euclid(n as isize) as usize;
            for fx in 0..fine {
                let sx = (fx as isize - half).rem_euclid(n as isize) as usize;
                taps[(fy / ov) * self.psf_side + fx / ov] += buf[sy * n + sx].norm_sqr();
            }
        }
        Kernel2D::new(self.psf_side, taps)?.normalized()
    }
}
