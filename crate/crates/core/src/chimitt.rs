//! Anisoplanatic simulation from Zernike statistics: per-block PSFs from
//! higher-order aberration coefficients, blended across overlapping blocks,
//! followed by a warp from spatially correlated tilts. Grayscale only.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degradation::{Degraded, DrawnParams, Stage};
use crate::error::{ensure, Error, Result};
use crate::ops::{add_noise, check_kernel_fits, convolve_window, warp, NoiseParams};
use crate::optics::{fried_parameter_plane_wave, noll_mode_variance, noll_to_nm, ImagingSystem, PsfGenerator};
use crate::{ImageBuffer, Kernel2D, MotionField, RandomSource};

/// First Noll index treated as a blurring aberration (tilts are 2 and 3).
pub const FIRST_ABERRATION_MODE: usize = 4;

/// Sampling and discretization shared by the Zernike-based simulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticsConfig {
    pub focal_length: f64,
    /// Detector pitch in metres; Nyquist (`lambda f / 2D`) when unset.
    pub pixel_pitch: Option<f64>,
    /// Side of one blending block; neighbouring blocks overlap by half.
    pub block_size: usize,
    /// Highest Noll index modelled.
    pub num_modes: usize,
    pub psf_side: usize,
    /// FFT grid used for pupil-to-PSF synthesis.
    pub pupil_grid: usize,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        Self {
            focal_length: 1.2,
            pixel_pitch: None,
            block_size: 32,
            num_modes: 36,
            psf_side: 33,
            pupil_grid: 256,
        }
    }
}

impl OpticsConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.focal_length > 0.0 && self.focal_length.is_finite(), "focal length must be positive");
        if let Some(p) = self.pixel_pitch {
            ensure!(p > 0.0 && p.is_finite(), "pixel pitch must be positive, got {p}");
        }
        ensure!(self.block_size >= 2, "block size must be >= 2, got {}", self.block_size);
        ensure!(
            self.num_modes >= 3,
            "need at least the tilt modes (num_modes >= 3), got {}",
            self.num_modes
        );
        ensure!(self.psf_side % 2 == 1, "psf side must be odd, got {}", self.psf_side);
        Ok(())
    }

    pub fn system(&self, aperture_diameter: f64, wavelength: f64) -> ImagingSystem {
        let mut s = ImagingSystem::nyquist(aperture_diameter, wavelength, self.focal_length);
        if let Some(p) = self.pixel_pitch {
            s.pixel_pitch = p;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChimittParams {
    pub aperture_diameter: f64,
    pub wavelength: f64,
    pub cn2: f64,
    pub propagation_length: f64,
    pub optics: OpticsConfig,
    /// Optional `TSCV` file holding the full inter-mode covariance for Noll
    /// modes 4..=num_modes, normalized to `D / r0 = 1`. A Kolmogorov diagonal
    /// is used when absent.
    pub inter_mode_covariance: Option<PathBuf>,
    pub noise: NoiseParams,
}

impl Default for ChimittParams {
    fn default() -> Self {
        Self {
            aperture_diameter: 0.2034,
            wavelength: 525e-9,
            cn2: 1e-14,
            propagation_length: 1000.0,
            optics: OpticsConfig::default(),
            inter_mode_covariance: None,
            noise: NoiseParams::NONE,
        }
    }
}

impl ChimittParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("aperture diameter", self.aperture_diameter),
            ("wavelength", self.wavelength),
            ("cn2", self.cn2),
            ("propagation length", self.propagation_length),
        ] {
            ensure!(v > 0.0 && v.is_finite(), "{name} must be positive, got {v}");
        }
        self.optics.validate()?;
        self.noise.validate()
    }

    pub fn system(&self) -> ImagingSystem {
        self.optics.system(self.aperture_diameter, self.wavelength)
    }
}

/// `r0 = (0.423 k^2 cn2 L)^(-3/5)` for the configured path.
pub fn fried_parameter(params: &ChimittParams) -> Result<f64> {
    fried_parameter_plane_wave(params.wavelength, params.cn2, params.propagation_length)
}

/// Resolved physical state shared by the Zernike-based simulators.
#[derive(Debug, Clone)]
pub(crate) struct TurbulenceSetup {
    pub system: ImagingSystem,
    pub r0: f64,
    pub propagation_length: f64,
    pub optics: OpticsConfig,
    pub inter_mode: InterModeCovariance,
}

impl TurbulenceSetup {
    pub fn from_chimitt(params: &ChimittParams) -> Result<Self> {
        params.validate()?;
        Self::resolve(
            params.system(),
            fried_parameter(params)?,
            params.propagation_length,
            &params.optics,
            params.inter_mode_covariance.as_deref(),
        )
    }

    pub fn resolve(
        system: ImagingSystem,
        r0: f64,
        propagation_length: f64,
        optics: &OpticsConfig,
        inter_mode_file: Option<&Path>,
    ) -> Result<Self> {
        system.validate()?;
        ensure!(r0 > 0.0 && r0.is_finite(), "Fried parameter must be positive, got {r0}");
        let strength = (system.aperture_diameter / r0).powf(5.0 / 3.0);
        let expected = optics.num_modes + 1 - FIRST_ABERRATION_MODE;
        let inter_mode = match inter_mode_file {
            Some(path) => {
                let m = InterModeCovariance::load(path)?;
                ensure!(
                    m.len() == expected,
                    "covariance file covers {} modes, expected {expected}",
                    m.len()
                );
                m.scaled(strength)?
            }
            None => InterModeCovariance::kolmogorov_diagonal(optics.num_modes, strength)?,
        };
        Ok(Self { system, r0, propagation_length, optics: optics.clone(), inter_mode })
    }

    pub fn d_over_r0(&self) -> f64 {
        self.system.aperture_diameter / self.r0
    }

    pub fn psf_generator(&self) -> Result<PsfGenerator> {
        PsfGenerator::new(&self.system, self.optics.num_modes, self.optics.psf_side, self.optics.pupil_grid)
    }
}

/// Grid of overlapping blocks. Block centres sit every `stride = block_size/2`
/// pixels; per-pixel quantities are blended bilinearly between centres, which
/// gives each block a tent-shaped footprint `block_size` wide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockGrid {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub rows: usize,
    pub cols: usize,
}

impl BlockGrid {
    pub fn new(height: usize, width: usize, block_size: usize) -> Result<Self> {
        ensure!(block_size >= 2, "block size must be >= 2");
        ensure!(height > 0 && width > 0, "image must be non-empty");
        let stride = block_size / 2;
        Ok(Self { height, width, stride, rows: height.div_ceil(stride), cols: width.div_ceil(stride) })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Centre `(y, x)` of block `(row, col)` in pixel coordinates.
    pub fn center(&self, row: usize, col: usize) -> (f64, f64) {
        let s = self.stride as f64;
        ((row as f64 + 0.5) * s - 0.5, (col as f64 + 0.5) * s - 0.5)
    }

    /// For each block index along an axis, the pixels it touches and their
    /// blending weights. Weights over all blocks sum to one at every pixel.
    fn axis_support(n: usize, stride: usize, count: usize) -> Vec<Vec<(usize, f64)>> {
        let mut support = vec![Vec::new(); count];
        for p in 0..n {
            let t = (p as f64 + 0.5) / stride as f64 - 0.5;
            let i0 = (t.floor().max(0.0) as usize).min(count - 1);
            let i1 = (i0 + 1).min(count - 1);
            let f = (t - i0 as f64).clamp(0.0, 1.0);
            if i0 == i1 {
                support[i0].push((p, 1.0));
            } else {
                support[i0].push((p, 1.0 - f));
                if f > 0.0 {
                    support[i1].push((p, f));
                }
            }
        }
        support
    }

    fn supports(&self) -> (Vec<Vec<(usize, f64)>>, Vec<Vec<(usize, f64)>>) {
        (
            Self::axis_support(self.height, self.stride, self.rows),
            Self::axis_support(self.width, self.stride, self.cols),
        )
    }

    /// Bilinear upsampling of one value per block to a full-resolution map.
    pub fn interpolate(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.len(), "one value per block expected");
        let (ys, xs) = self.supports();
        let mut out = vec![0.0; self.height * self.width];
        for (r, ysup) in ys.iter().enumerate() {
            for (c, xsup) in xs.iter().enumerate() {
                let v = values[r * self.cols + c];
                for &(y, wy) in ysup {
                    for &(x, wx) in xsup {
                        out[y * self.width + x] += wy * wx * v;
                    }
                }
            }
        }
        out
    }
}

/// Normalized correlation of angle-of-arrival tilts for two point sources
/// whose separation in the object plane is `separation` metres.
///
/// Rays from the two points converge on the aperture; at fractional distance
/// `t` from the source they are `separation * (1 - t)` apart while the beam
/// footprint is `D * t` wide. Layers are weighted by the spherical-wave tilt
/// weight `t^(5/3)` and each contributes an inverse-multiquadric correlation
/// `(1 + u^2)^(-1/6)`, which is positive definite, so the mixture is too.
pub fn angle_of_arrival_correlation(separation: f64, aperture_diameter: f64) -> f64 {
    const INTERVALS: usize = 512;
    let h = 1.0 / INTERVALS as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..=INTERVALS {
        let w = if k == 0 || k == INTERVALS {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let t = k as f64 * h;
        let weight = w * t.powf(5.0 / 3.0);
        if weight == 0.0 {
            continue;
        }
        let u = separation * (1.0 - t) / (aperture_diameter * t);
        num += weight * (1.0 + u * u).powf(-1.0 / 6.0);
        den += weight;
    }
    num / den
}

fn eigen_sym(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new((m + m.transpose()) * 0.5)
}

/// Clamps negative eigenvalues to zero. Returns the repaired matrix and a
/// square-root factor `F` with `F F^T` equal to it. With `strict`, eigenvalues
/// below `-1e-9 * max(1, |lambda|_max)` are rejected instead.
fn repair_psd(m: &DMatrix<f64>, strict: bool) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    ensure!(m.is_square(), "covariance must be square");
    ensure!(m.iter().all(|v| v.is_finite()), "covariance must be finite");
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    ensure!(
        (m - m.transpose()).iter().all(|v| v.abs() <= 1e-9 * scale),
        "covariance is not symmetric"
    );
    let eig = eigen_sym(m);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if strict {
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        ensure!(min >= -1e-9 * lmax, "covariance is not positive semi-definite (eigenvalue {min:.3e})");
    }
    let clamped: DVector<f64> = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let factor = v * DMatrix::from_diagonal(&clamped.map(f64::sqrt));
    let repaired = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    let repaired = (&repaired + repaired.transpose()) * 0.5;
    Ok((repaired, factor))
}

const COV_MAGIC: &[u8; 4] = b"TSCV";

/// Covariance of the aberration coefficients (Noll 4 upward), rad^2.
#[derive(Debug, Clone, PartialEq)]
pub struct InterModeCovariance {
    matrix: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl InterModeCovariance {
    /// Kolmogorov variances on the diagonal, cross-mode terms dropped.
    pub fn kolmogorov_diagonal(num_modes: usize, d_over_r0_53: f64) -> Result<Self> {
        ensure!(num_modes >= 3, "num_modes must be >= 3");
        ensure!(d_over_r0_53 >= 0.0 && d_over_r0_53.is_finite(), "turbulence strength must be >= 0");
        let diag: Vec<f64> = (FIRST_ABERRATION_MODE..=num_modes)
            .map(|j| noll_to_nm(j).map(|(n, _)| noll_mode_variance(n) * d_over_r0_53))
            .collect::<Result<_>>()?;
        let d = DVector::from_vec(diag);
        Ok(Self { factor: DMatrix::from_diagonal(&d.map(f64::sqrt)), matrix: DMatrix::from_diagonal(&d) })
    }

    /// Validates symmetry and positive semi-definiteness.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let (matrix, factor) = repair_psd(&matrix, true)?;
        Ok(Self { matrix, factor })
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        ensure!(s >= 0.0 && s.is_finite(), "scale must be >= 0");
        Ok(Self { matrix: &self.matrix * s, factor: &self.factor * s.sqrt() })
    }

    pub fn sample(&self, rng: &mut RandomSource) -> Vec<f64> {
        let z = DVector::from_fn(self.len(), |_, _| rng.standard_normal());
        (&self.factor * z).iter().copied().collect()
    }

    /// `TSCV`, u32 `n`, then `n * n` little-endian f64 entries, row-major.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let n = self.len();
        let mut buf = Vec::with_capacity(8 + 8 * n * n);
        buf.extend_from_slice(COV_MAGIC);
        buf.extend_from_slice(&(n as u32).to_le_bytes());
        for i in 0..n {
            for j in 0..n {
                buf.extend_from_slice(&self.matrix[(i, j)].to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |reason: &str| Error::Format { kind: "covariance", reason: reason.to_string() };
        let mut header = [0u8; 8];
        r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
        if &header[..4] != COV_MAGIC {
            return Err(bad("bad magic"));
        }
        let n = u32::from_le_bytes(header[4..].try_into().unwrap()) as usize;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != 8 * n * n {
            return Err(bad("payload length does not match dimension"));
        }
        let vals: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::from_matrix(DMatrix::from_row_slice(n, n, &vals))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Block-to-block tilt covariance (same for both axes, axes independent) and
/// the inter-mode covariance of the higher-order coefficients.
#[derive(Debug, Clone)]
pub struct TiltCorrelation {
    rows: usize,
    cols: usize,
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
    tilt_to_pixels: f64,
    inter_mode: InterModeCovariance,
}

impl TiltCorrelation {
    /// Wraps an externally supplied block covariance (rad^2, one axis).
    pub fn from_covariance(
        covariance: DMatrix<f64>,
        (rows, cols): (usize, usize),
        tilt_to_pixels: f64,
        inter_mode: InterModeCovariance,
    ) -> Result<Self> {
        ensure!(covariance.nrows() == rows * cols, "covariance size does not match {rows}x{cols} blocks");
        let (covariance, factor) = repair_psd(&covariance, true)?;
        Ok(Self { rows, cols, covariance, factor, tilt_to_pixels, inter_mode })
    }

    pub(crate) fn from_setup(setup: &TurbulenceSetup, grid: &BlockGrid) -> Result<Self> {
        let n = grid.len();
        let variance = noll_mode_variance(1) * setup.d_over_r0().powf(5.0 / 3.0);
        let metres_per_pixel = setup.system.pixel_angle() * setup.propagation_length;
        let centers: Vec<(f64, f64)> =
            (0..n).map(|k| grid.center(k / grid.cols, k % grid.cols)).collect();
        let mut cov = DMatrix::zeros(n, n);
        for a in 0..n {
            cov[(a, a)] = variance;
            for b in a + 1..n {
                let d = (centers[a].0 - centers[b].0).hypot(centers[a].1 - centers[b].1);
                let c = variance * angle_of_arrival_correlation(d * metres_per_pixel, setup.system.aperture_diameter);
                cov[(a, b)] = c;
                cov[(b, a)] = c;
            }
        }
        let (covariance, factor) = repair_psd(&cov, false)?;
        Ok(Self {
            rows: grid.rows,
            cols: grid.cols,
            covariance,
            factor,
            tilt_to_pixels: setup.system.tilt_to_pixels(),
            inter_mode: setup.inter_mode.clone(),
        })
    }

    pub fn blocks(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Per-axis block covariance, rad^2.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Joint covariance of `[x tilts..., y tilts...]`.
    pub fn full_covariance(&self) -> DMatrix<f64> {
        let n = self.covariance.nrows();
        let mut full = DMatrix::zeros(2 * n, 2 * n);
        full.view_mut((0, 0), (n, n)).copy_from(&self.covariance);
        full.view_mut((n, n), (n, n)).copy_from(&self.covariance);
        full
    }

    pub fn inter_mode(&self) -> &InterModeCovariance {
        &self.inter_mode
    }

    pub fn tilt_to_pixels(&self) -> f64 {
        self.tilt_to_pixels
    }
}

pub fn build_tilt_correlation(params: &ChimittParams, grid: &BlockGrid) -> Result<TiltCorrelation> {
    TiltCorrelation::from_setup(&TurbulenceSetup::from_chimitt(params)?, grid)
}

/// One joint draw of block tilts.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltDraw {
    /// Noll 2 and 3 coefficients per block, radians.
    pub coeffs: Vec<[f64; 2]>,
    /// Image shift `(dx, dy)` per block, pixels.
    pub shifts: Vec<[f64; 2]>,
}

impl TiltDraw {
    /// Per-pixel displacement, blended bilinearly between block centres.
    pub fn field(&self, grid: &BlockGrid, scale: f64) -> MotionField {
        let dx: Vec<f64> = self.shifts.iter().map(|s| s[0] * scale).collect();
        let dy: Vec<f64> = self.shifts.iter().map(|s| s[1] * scale).collect();
        MotionField::new(grid.height, grid.width, grid.interpolate(&dx), grid.interpolate(&dy))
            .expect("interpolated tilts are finite")
    }
}

pub fn sample_tilts(corr: &TiltCorrelation, rng: &mut RandomSource) -> TiltDraw {
    let n = corr.covariance.nrows();
    let zx = DVector::from_fn(n, |_, _| rng.standard_normal());
    let zy = DVector::from_fn(n, |_, _| rng.standard_normal());
    let ax = &corr.factor * zx;
    let ay = &corr.factor * zy;
    let k = corr.tilt_to_pixels;
    TiltDraw {
        coeffs: ax.iter().zip(ay.iter()).map(|(x, y)| [*x, *y]).collect(),
        shifts: ax.iter().zip(ay.iter()).map(|(x, y)| [x * k, y * k]).collect(),
    }
}

/// Zernike coefficients of one block, Noll 2 upward, radians.
#[derive(Debug, Clone, PartialEq)]
pub struct ZernikeCoeffs(pub Vec<f64>);

impl ZernikeCoeffs {
    pub fn from_parts(tilt: [f64; 2], aberrations: &[f64]) -> Self {
        let mut v = Vec::with_capacity(2 + aberrations.len());
        v.extend_from_slice(&tilt);
        v.extend_from_slice(aberrations);
        Self(v)
    }

    pub fn tilt(&self) -> [f64; 2] {
        [self.0.first().copied().unwrap_or(0.0), self.0.get(1).copied().unwrap_or(0.0)]
    }

    /// Same coefficients with both tilt terms zeroed.
    pub fn without_tilt(&self) -> Self {
        let mut v = self.0.clone();
        v.iter_mut().take(2).for_each(|c| *c = 0.0);
        Self(v)
    }
}

/// PSF of a single block (see [`PsfGenerator::psf`]).
pub fn psf_from_coeffs(coeffs: &ZernikeCoeffs, params: &ChimittParams, psf_side: usize) -> Result<Kernel2D> {
    params.validate()?;
    let gen = PsfGenerator::new(&params.system(), params.optics.num_modes, psf_side, params.optics.pupil_grid)?;
    gen.psf(&coeffs.0)
}

/// Everything drawn for one image by the Zernike-based simulators.
#[derive(Debug, Clone)]
pub(crate) struct TurbulenceDraw {
    pub tilts: TiltDraw,
    pub coeffs: Vec<ZernikeCoeffs>,
}

pub(crate) fn draw_turbulence(corr: &TiltCorrelation, rng: &mut RandomSource) -> TurbulenceDraw {
    let tilts = sample_tilts(corr, rng);
    let coeffs = tilts
        .coeffs
        .iter()
        .map(|t| ZernikeCoeffs::from_parts(*t, &corr.inter_mode.sample(rng)))
        .collect();
    TurbulenceDraw { tilts, coeffs }
}

/// Tilt-free PSF of every block, in block order.
pub(crate) fn block_psfs(gen: &PsfGenerator, coeffs: &[ZernikeCoeffs]) -> Result<Vec<Kernel2D>> {
    coeffs.par_iter().map(|c| gen.psf(&c.without_tilt().0)).collect()
}

/// Spatially varying blur: each block's PSF is applied over its footprint
/// and the results are blended with the grid's bilinear weights.
pub fn blockwise_blur(img: &ImageBuffer, grid: &BlockGrid, psfs: &[Kernel2D]) -> Result<ImageBuffer> {
    let (h, w) = img.dims();
    ensure!((grid.height, grid.width) == (h, w), "block grid does not match image");
    ensure!(psfs.len() == grid.len(), "expected {} PSFs, got {}", grid.len(), psfs.len());
    for k in psfs {
        check_kernel_fits(h, w, k)?;
    }
    let (ys, xs) = grid.supports();
    let planes = img
        .planes()
        .map(|plane| {
            let tiles: Vec<(usize, usize, Vec<f64>)> = (0..grid.len())
                .into_par_iter()
                .filter_map(|k| {
                    let (ysup, xsup) = (&ys[k / grid.cols], &xs[k % grid.cols]);
                    let (&(y0, _), &(x0, _)) = (ysup.first()?, xsup.first()?);
                    let win = convolve_window(plane, h, w, &psfs[k], (y0, x0), (ysup.len(), xsup.len()));
                    Some((k, y0, win))
                })
                .collect();
            let mut out = vec![0.0; h * w];
            for (k, _, win) in tiles {
                let (ysup, xsup) = (&ys[k / grid.cols], &xs[k % grid.cols]);
                let ww = xsup.len();
                for (wy, &(y, fy)) in ysup.iter().enumerate() {
                    for (wx, &(x, fx)) in xsup.iter().enumerate() {
                        out[y * w + x] += fy * fx * win[wy * ww + wx];
                    }
                }
            }
            out
        })
        .collect();
    ImageBuffer::from_planes(h, w, planes)
}

pub(crate) fn require_grayscale(img: &ImageBuffer, method: &str) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::UnsupportedInput(format!(
            "the {method} simulator is only defined for grayscale images; convert the input to a single channel"
        )));
    }
    Ok(())
}

/// Block PSF blur, then warp by the correlated tilts, then noise and clip.
pub fn degrade_chimitt(img: &ImageBuffer, params: &ChimittParams, rng: &mut RandomSource) -> Result<Degraded> {
    require_grayscale(img, "chimitt")?;
    let setup = TurbulenceSetup::from_chimitt(params)?;
    let (h, w) = img.dims();
    let grid = BlockGrid::new(h, w, setup.optics.block_size)?;
    let corr = TiltCorrelation::from_setup(&setup, &grid)?;
    let draw = draw_turbulence(&corr, rng);

    let psfs = block_psfs(&setup.psf_generator()?, &draw.coeffs)?;
    let blurred = blockwise_blur(img, &grid, &psfs)?;
    let field = draw.tilts.field(&grid, 1.0);
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
        drawn: DrawnParams::Chimitt {
            propagation_length: params.propagation_length,
            fried_parameter: setup.r0,
            blocks: (grid.rows, grid.cols),
        },
    })
}
