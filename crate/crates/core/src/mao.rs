//! Spatially varying blur as a handful of invariant convolutions.
//!
//! A principal-component basis is fitted to PSFs sampled under the target
//! statistics. Each block PSF is projected onto the basis, the coefficients
//! are upsampled to per-pixel weight maps, and the image is blurred with the
//! mean kernel plus every basis kernel once. Tilts follow the block model
//! shared with [`crate::chimitt`].

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chimitt::{
    block_psfs, draw_turbulence, fried_parameter, ChimittParams, OpticsConfig, TiltCorrelation, TurbulenceSetup,
    BlockGrid,
};
use crate::degradation::{Degraded, DrawnParams, Stage};
use crate::error::{ensure, Error, Result};
use crate::ops::{add_noise, check_kernel_fits, warp, NoiseParams, PlaneSpectrum};
use crate::optics::ImagingSystem;
use crate::{ImageBuffer, Kernel2D, RandomSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaoParams {
    pub aperture_diameter: f64,
    pub fried_parameter: f64,
    pub wavelength: f64,
    pub propagation_length: f64,
    /// Multiplies the tilt displacements.
    pub distortion_strength: f64,
    pub num_basis: usize,
    /// PSFs drawn to fit the basis.
    pub num_samples: usize,
    pub basis_seed: u64,
    pub optics: OpticsConfig,
    /// Same layout and normalization as the Chimitt inter-mode file.
    pub inter_mode_covariance: Option<PathBuf>,
    pub noise: NoiseParams,
}

impl Default for MaoParams {
    fn default() -> Self {
        Self {
            aperture_diameter: 0.1,
            fried_parameter: 0.02,
            wavelength: 500e-9,
            propagation_length: 1000.0,
            distortion_strength: 5.0,
            num_basis: 8,
            num_samples: 512,
            basis_seed: 0,
            optics: OpticsConfig::default(),
            inter_mode_covariance: None,
            noise: NoiseParams::NONE,
        }
    }
}

impl MaoParams {
    /// Parameters describing the same turbulence and optics as `chimitt`,
    /// with unit distortion strength.
    pub fn matched_to(chimitt: &ChimittParams) -> Result<Self> {
        Ok(Self {
            aperture_diameter: chimitt.aperture_diameter,
            fried_parameter: fried_parameter(chimitt)?,
            wavelength: chimitt.wavelength,
            propagation_length: chimitt.propagation_length,
            distortion_strength: 1.0,
            optics: chimitt.optics.clone(),
            inter_mode_covariance: chimitt.inter_mode_covariance.clone(),
            noise: chimitt.noise,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("aperture diameter", self.aperture_diameter),
            ("Fried parameter", self.fried_parameter),
            ("wavelength", self.wavelength),
            ("propagation length", self.propagation_length),
        ] {
            ensure!(v > 0.0 && v.is_finite(), "{name} must be positive, got {v}");
        }
        ensure!(
            self.distortion_strength >= 0.0 && self.distortion_strength.is_finite(),
            "distortion strength must be >= 0, got {}",
            self.distortion_strength
        );
        ensure!(self.num_basis >= 1, "num_basis must be >= 1");
        ensure!(
            self.num_samples >= self.num_basis,
            "num_samples ({}) must be >= num_basis ({})",
            self.num_samples,
            self.num_basis
        );
        self.optics.validate()?;
        self.noise.validate()
    }

    pub fn system(&self) -> ImagingSystem {
        self.optics.system(self.aperture_diameter, self.wavelength)
    }

    /// Block tilt covariance for an image covered by `grid`, before the
    /// distortion-strength scaling.
    pub fn tilt_correlation(&self, grid: &BlockGrid) -> Result<TiltCorrelation> {
        TiltCorrelation::from_setup(&self.setup()?, grid)
    }

    fn setup(&self) -> Result<TurbulenceSetup> {
        self.validate()?;
        TurbulenceSetup::resolve(
            self.system(),
            self.fried_parameter,
            self.propagation_length,
            &self.optics,
            self.inter_mode_covariance.as_deref(),
        )
    }
}

const BASIS_MAGIC: &[u8; 4] = b"TSPB";

/// Mean kernel plus orthonormal, signed basis kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfBasis {
    mean: Kernel2D,
    kernels: Vec<Kernel2D>,
}

impl PsfBasis {
    pub fn new(mean: Kernel2D, kernels: Vec<Kernel2D>) -> Result<Self> {
        ensure!(
            kernels.iter().all(|k| k.side() == mean.side()),
            "basis kernels must share the mean kernel's side"
        );
        Ok(Self { mean, kernels })
    }

    pub fn mean_kernel(&self) -> &Kernel2D {
        &self.mean
    }

    pub fn kernels(&self) -> &[Kernel2D] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn side(&self) -> usize {
        self.mean.side()
    }

    /// First `n` basis kernels.
    pub fn truncated(&self, n: usize) -> Self {
        Self { mean: self.mean.clone(), kernels: self.kernels[..n.min(self.len())].to_vec() }
    }

    /// Least-squares coefficients of `kernel - mean` on the basis.
    pub fn project(&self, kernel: &Kernel2D) -> Vec<f64> {
        assert_eq!(kernel.side(), self.side(), "kernel side does not match basis");
        self.kernels
            .iter()
            .map(|b| {
                b.weights()
                    .iter()
                    .zip(kernel.weights().iter().zip(self.mean.weights()))
                    .map(|(b, (k, m))| b * (k - m))
                    .sum()
            })
            .collect()
    }

    /// `mean + sum_i coeffs[i] * kernel_i`.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Kernel2D {
        let mut taps = self.mean.weights().to_vec();
        for (c, k) in coeffs.iter().zip(&self.kernels) {
            taps.iter_mut().zip(k.weights()).for_each(|(t, w)| *t += c * w);
        }
        Kernel2D::new(self.side(), taps).expect("finite combination of finite taps")
    }

    /// Root-mean-square tap error of projecting and reconstructing `samples`.
    pub fn reconstruction_rmse(&self, samples: &[Kernel2D]) -> f64 {
        let mut sq = 0.0;
        let mut count = 0usize;
        for s in samples {
            let r = self.reconstruct(&self.project(s));
            sq += r.weights().iter().zip(s.weights()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            count += s.weights().len();
        }
        (sq / count as f64).sqrt()
    }

    /// Rounds every tap to `f32`, the precision of the cache file.
    pub fn quantized(&self) -> Self {
        let q = |k: &Kernel2D| {
            Kernel2D::new(k.side(), k.weights().iter().map(|w| *w as f32 as f64).collect()).expect("finite")
        };
        Self { mean: q(&self.mean), kernels: self.kernels.iter().map(q).collect() }
    }

    /// `TSPB`, u32 `num_basis`, u32 `side`, then the mean kernel followed by
    /// each basis kernel as little-endian f32 taps.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(BASIS_MAGIC);
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.side() as u32).to_le_bytes());
        for k in std::iter::once(&self.mean).chain(&self.kernels) {
            for t in k.weights() {
                buf.extend_from_slice(&(*t as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |reason: &str| Error::Format { kind: "psf basis", reason: reason.to_string() };
        let mut header = [0u8; 12];
        r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
        if &header[..4] != BASIS_MAGIC {
            return Err(bad("bad magic"));
        }
        let n = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let side = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        if side % 2 == 0 {
            return Err(bad("kernel side must be odd"));
        }
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        let taps = side * side;
        if body.len() != 4 * taps * (n + 1) {
            return Err(bad("payload length does not match header"));
        }
        let vals: Vec<f64> =
            body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        let mut kernels = vals
            .chunks_exact(taps)
            .map(|c| Kernel2D::new(side, c.to_vec()).map_err(|_| bad("non-finite taps")))
            .collect::<Result<Vec<_>>>()?;
        let mean = kernels.remove(0);
        Self::new(mean, kernels)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Principal components of a fixed sample set. If the centred samples span
/// fewer than `num_basis` dimensions the basis is shortened and a warning
/// logged.
pub fn psf_basis_from_samples(samples: &[Kernel2D], num_basis: usize) -> Result<PsfBasis> {
    ensure!(!samples.is_empty(), "need at least one PSF sample");
    ensure!(num_basis >= 1, "num_basis must be >= 1");
    ensure!(
        samples.len() >= num_basis,
        "num_samples ({}) must be >= num_basis ({num_basis})",
        samples.len()
    );
    let side = samples[0].side();
    ensure!(samples.iter().all(|s| s.side() == side), "PSF samples must share one side");
    let m = samples.len();
    let d = side * side;

    let mut mean = vec![0.0; d];
    for s in samples {
        mean.iter_mut().zip(s.weights()).for_each(|(a, w)| *a += w / m as f64);
    }
    let centred = DMatrix::from_fn(m, d, |i, j| samples[i].weights()[j] - mean[j]);
    let gram = &centred * centred.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    // Directions carrying a negligible share of the raw sample energy are
    // treated as round-off.
    let energy: f64 = samples.iter().flat_map(|s| s.weights()).map(|w| w * w).sum();
    let tol = energy * 1e-20;

    let mut kernels: Vec<Vec<f64>> = Vec::new();
    for &idx in order.iter().take(num_basis) {
        if eig.eigenvalues[idx] <= tol {
            break;
        }
        let mut v: Vec<f64> = (centred.transpose() * eig.eigenvectors.column(idx)).iter().copied().collect();
        // Gram-Schmidt against the accepted directions to remove round-off.
        for _ in 0..2 {
            for b in &kernels {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm * norm <= tol {
            break;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        kernels.push(v);
    }
    if kernels.len() < num_basis {
        log::warn!(
            "PSF samples span only {} dimensions; basis reduced from {num_basis} to {}",
            kernels.len(),
            kernels.len()
        );
    }
    PsfBasis::new(
        Kernel2D::new(side, mean)?,
        kernels.into_iter().map(|k| Kernel2D::new(side, k)).collect::<Result<_>>()?,
    )
}

/// Tilt-free PSFs drawn under the parameters' aberration statistics.
pub fn sample_psfs(params: &MaoParams, num_samples: usize, rng: &mut RandomSource) -> Result<Vec<Kernel2D>> {
    let setup = params.setup()?;
    let gen = setup.psf_generator()?;
    let coeffs: Vec<Vec<f64>> = (0..num_samples)
        .map(|_| {
            let mut c = vec![0.0, 0.0];
            c.extend(setup.inter_mode.sample(rng));
            c
        })
        .collect();
    coeffs.par_iter().map(|c| gen.psf(c)).collect()
}

pub fn build_psf_basis(params: &MaoParams, num_samples: usize, rng: &mut RandomSource) -> Result<PsfBasis> {
    ensure!(
        num_samples >= params.num_basis,
        "num_samples ({num_samples}) must be >= num_basis ({})",
        params.num_basis
    );
    psf_basis_from_samples(&sample_psfs(params, num_samples, rng)?, params.num_basis)
}

/// `conv(img, mean) + sum_i map_i * conv(img, kernel_i)`, per channel.
pub fn spatially_varying_blur(img: &ImageBuffer, basis: &PsfBasis, weight_maps: &[Vec<f64>]) -> Result<ImageBuffer> {
    let (h, w) = img.dims();
    ensure!(
        weight_maps.len() == basis.len(),
        "expected {} weight maps, got {}",
        basis.len(),
        weight_maps.len()
    );
    ensure!(weight_maps.iter().all(|m| m.len() == h * w), "weight maps must match the {h}x{w} image");
    check_kernel_fits(h, w, basis.mean_kernel())?;
    let r = basis.mean_kernel().radius();
    let planes = img
        .planes()
        .map(|plane| {
            let spec = PlaneSpectrum::new(plane, h, w, r);
            let parts: Vec<Vec<f64>> = std::iter::once(basis.mean_kernel())
                .chain(basis.kernels())
                .collect::<Vec<_>>()
                .par_iter()
                .map(|k| spec.apply(k))
                .collect();
            let mut out = parts[0].clone();
            for (part, map) in parts[1..].iter().zip(weight_maps) {
                out.iter_mut().zip(part.iter().zip(map)).for_each(|(o, (p, m))| *o += p * m);
            }
            out
        })
        .collect();
    ImageBuffer::from_planes(h, w, planes)
}

/// Holds a fitted basis so repeated degradations skip the fit.
#[derive(Debug, Clone)]
pub struct MaoSimulator {
    params: MaoParams,
    basis: PsfBasis,
}

impl MaoSimulator {
    /// Fits the basis from `num_samples` PSFs seeded by `basis_seed`.
    pub fn new(params: MaoParams) -> Result<Self> {
        let basis = build_psf_basis(&params, params.num_samples, &mut RandomSource::new(params.basis_seed))?;
        Ok(Self { params, basis })
    }

    pub fn with_basis(params: MaoParams, basis: PsfBasis) -> Result<Self> {
        params.validate()?;
        ensure!(
            basis.side() == params.optics.psf_side,
            "basis side {} does not match psf side {}",
            basis.side(),
            params.optics.psf_side
        );
        Ok(Self { params, basis })
    }

    pub fn params(&self) -> &MaoParams {
        &self.params
    }

    pub fn basis(&self) -> &PsfBasis {
        &self.basis
    }

    pub fn degrade(&self, img: &ImageBuffer, rng: &mut RandomSource) -> Result<Degraded> {
        let params = &self.params;
        let setup = params.setup()?;
        let (h, w) = img.dims();
        let grid = BlockGrid::new(h, w, setup.optics.block_size)?;
        let corr = TiltCorrelation::from_setup(&setup, &grid)?;
        let draw = draw_turbulence(&corr, rng);

        let psfs = block_psfs(&setup.psf_generator()?, &draw.coeffs)?;
        let coeffs: Vec<Vec<f64>> = psfs.iter().map(|k| self.basis.project(k)).collect();
        let maps: Vec<Vec<f64>> = (0..self.basis.len())
            .map(|i| grid.interpolate(&coeffs.iter().map(|c| c[i]).collect::<Vec<_>>()))
            .collect();
        let blurred = spatially_varying_blur(img, &self.basis, &maps)?;
        let field = draw.tilts.field(&grid, params.distortion_strength);
        let warped = warp(&blurred, &field)?;
        let mut trace = vec![Stage::SpatiallyVaryingBlur, Stage::Warp];
        let noisy = if params.noise.sigma > 0.0 {
            trace.push(Stage::Noise);
            add_noise(&warped, params.noise, rng)?
        } else {
            warped
        };
        trace.push(Stage::Clip);
        Ok(Degraded {
            image: noisy.clipped(),
            field,
            trace,
            drawn: DrawnParams::Mao {
                propagation_length: params.propagation_length,
                fried_parameter: params.fried_parameter,
                distortion_strength: params.distortion_strength,
                num_basis: self.basis.len(),
            },
        })
    }
}

/// Fits a basis and degrades one image. Use [`MaoSimulator`] to reuse the
/// basis across images.
pub fn degrade_mao(img: &ImageBuffer, params: &MaoParams, rng: &mut RandomSource) -> Result<Degraded> {
    MaoSimulator::new(params.clone())?.degrade(img, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::gaussian_kernel;
    use crate::ops::convolve;

    fn small() -> MaoParams {
        MaoParams {
            num_samples: 64,
            optics: OpticsConfig { psf_side: 15, pupil_grid: 64, num_modes: 15, ..Default::default() },
            ..Default::default()
        }
    }

    fn gaussians() -> Vec<Kernel2D> {
        [0.8, 1.0, 1.3, 1.7, 2.2, 2.9].iter().map(|s| gaussian_kernel(*s, 9).unwrap()).collect()
    }

    #[test]
    fn basis_is_orthonormal() {
        let basis = build_psf_basis(&small(), 64, &mut RandomSource::new(1)).unwrap();
        assert_eq!(basis.len(), 8);
        assert!((basis.mean_kernel().sum() - 1.0).abs() < 1e-9);
        for (i, a) in basis.kernels().iter().enumerate() {
            for (j, b) in basis.kernels().iter().enumerate() {
                let dot: f64 = a.weights().iter().zip(b.weights()).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-6, "gram[{i}][{j}] = {dot}");
            }
        }
    }

    #[test]
    fn full_basis_reconstructs_samples() {
        let samples = gaussians();
        let basis = psf_basis_from_samples(&samples, samples.len()).unwrap();
        // centring removes one dimension
        assert_eq!(basis.len(), samples.len() - 1);
        for s in &samples {
            assert!(basis.reconstruct(&basis.project(s)).max_abs_diff(s) < 1e-6);
        }
    }

    #[test]
    fn identical_samples_collapse() {
        let k = gaussian_kernel(1.0, 7).unwrap();
        let basis = psf_basis_from_samples(&vec![k.clone(); 5], 3).unwrap();
        assert!(basis.is_empty());
        assert!(basis.mean_kernel().max_abs_diff(&k) < 1e-15);
    }

    #[test]
    fn rmse_decreases_with_basis_size() {
        let samples = gaussians();
        let basis = psf_basis_from_samples(&samples, 5).unwrap();
        let errs: Vec<f64> = (0..=5).map(|n| basis.truncated(n).reconstruction_rmse(&samples)).collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }

    #[test]
    fn zero_maps_equal_mean_convolution() {
        let img = ImageBuffer::from_fn(24, 24, |y, x| ((x * 5 + y * 3) % 11) as f64 / 11.0);
        let basis = psf_basis_from_samples(&gaussians(), 3).unwrap();
        let maps = vec![vec![0.0; 24 * 24]; 3];
        let out = spatially_varying_blur(&img, &basis, &maps).unwrap();
        let want = convolve(&img, basis.mean_kernel()).unwrap();
        assert!(out.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn constant_maps_equal_combined_kernel() {
        let img = ImageBuffer::from_fn(24, 24, |y, x| ((x * 5 + y * 3) % 11) as f64 / 11.0);
        let basis = psf_basis_from_samples(&gaussians(), 3).unwrap();
        let w = [0.03, -0.02, 0.01];
        let maps: Vec<Vec<f64>> = w.iter().map(|v| vec![*v; 24 * 24]).collect();
        let out = spatially_varying_blur(&img, &basis, &maps).unwrap();
        let want = convolve(&img, &basis.reconstruct(&w)).unwrap();
        assert!(out.max_abs_diff(&want) < 1e-6);
    }

    #[test]
    fn map_count_mismatch() {
        let img = ImageBuffer::zeros(16, 16, 1);
        let basis = psf_basis_from_samples(&gaussians(), 3).unwrap();
        assert!(spatially_varying_blur(&img, &basis, &[vec![0.0; 256]]).is_err());
        assert!(spatially_varying_blur(&img, &basis, &vec![vec![0.0; 10]; 3]).is_err());
    }

    #[test]
    fn cache_roundtrip() {
        let basis = psf_basis_from_samples(&gaussians(), 3).unwrap().quantized();
        let mut bytes = Vec::new();
        basis.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"TSPB");
        assert_eq!(bytes.len(), 12 + 4 * 81 * 4);
        assert_eq!(PsfBasis::read_from(&bytes[..]).unwrap(), basis);
        assert!(PsfBasis::read_from(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn no_distortion_no_aberration_is_blur_only() {
        let params = MaoParams { distortion_strength: 0.0, fried_parameter: 1e6, ..small() };
        let sim = MaoSimulator::new(params).unwrap();
        let img = ImageBuffer::from_fn(32, 32, |y, x| ((x / 4 + y / 4) % 2) as f64);
        let out = sim.degrade(&img, &mut RandomSource::new(5)).unwrap();
        assert!(out.field.is_zero());
        let want = convolve(&img, sim.basis().mean_kernel()).unwrap().clipped();
        assert!(out.image.max_abs_diff(&want) < 1e-6);
    }

    #[test]
    fn deterministic() {
        let sim = MaoSimulator::new(small()).unwrap();
        let img = ImageBuffer::from_fn(48, 48, |y, x| ((x / 6 + y / 6) % 2) as f64);
        let a = sim.degrade(&img, &mut RandomSource::new(3)).unwrap();
        let b = sim.degrade(&img, &mut RandomSource::new(3)).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.field, b.field);
    }

    #[test]
    fn rgb_channels_share_degradation() {
        let sim = MaoSimulator::new(small()).unwrap();
        let gray = ImageBuffer::from_fn(32, 32, |y, x| ((x / 4 + y / 4) % 2) as f64);
        let rgb = ImageBuffer::from_planes(32, 32, vec![gray.data().to_vec(); 3]).unwrap();
        let a = sim.degrade(&gray, &mut RandomSource::new(8)).unwrap();
        let b = sim.degrade(&rgb, &mut RandomSource::new(8)).unwrap();
        for c in 0..3 {
            assert_eq!(b.image.plane(c), a.image.plane(0));
        }
    }
}
