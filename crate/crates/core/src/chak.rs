//! Blur-then-deform model built from superposed local random motion patches.
//!
//! The deformation field is the sum of `K` patches, each an `S x S` pair of
//! Gaussian-smoothed standard-normal fields scaled by a strength `eta`, placed
//! at a uniformly drawn pixel.

use serde::{Deserialize, Serialize};

use crate::degradation::{Degraded, DrawnParams, Stage};
use crate::error::{ensure, Result};
use crate::kernel::{default_side, gaussian_kernel};
use crate::ops::{add_noise, convolve, warp, NoiseParams};
use crate::{ImageBuffer, Kernel2D, MotionField, RandomSource};

/// Law for the number of patches: `base + step * U{0..=max_multiplier}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationLaw {
    pub base: usize,
    pub step: usize,
    pub max_multiplier: u64,
}

impl IterationLaw {
    pub const fn fixed(k: usize) -> Self {
        Self { base: k, step: 0, max_multiplier: 0 }
    }

    pub fn draw(&self, rng: &mut RandomSource) -> usize {
        self.base + self.step * rng.int_inclusive(0, self.max_multiplier) as usize
    }
}

impl Default for IterationLaw {
    fn default() -> Self {
        Self { base: 1000, step: 3000, max_multiplier: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChakParams {
    pub patch_size: usize,
    pub iterations: IterationLaw,
    /// Inclusive range the per-patch strength is drawn from.
    pub eta_range: (f64, f64),
    pub smoothing_sigma: f64,
    pub blur_sigma: f64,
    pub noise: NoiseParams,
}

impl Default for ChakParams {
    fn default() -> Self {
        Self {
            patch_size: 6,
            iterations: IterationLaw::default(),
            eta_range: (0.13, 0.25),
            smoothing_sigma: 16.0,
            blur_sigma: 1.5,
            noise: NoiseParams::NONE,
        }
    }
}

impl ChakParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.patch_size >= 1, "patch size must be >= 1");
        let (lo, hi) = self.eta_range;
        ensure!(
            0.0 <= lo && lo <= hi && hi < 1.0,
            "eta range must satisfy 0 <= lo <= hi < 1, got [{lo}, {hi}]"
        );
        ensure!(
            self.smoothing_sigma > 0.0 && self.smoothing_sigma.is_finite(),
            "smoothing sigma must be positive"
        );
        ensure!(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite(), "blur sigma must be >= 0");
        self.noise.validate()
    }

    fn smoothing_kernel(&self) -> Result<Kernel2D> {
        let side = default_side(self.smoothing_sigma, self.patch_size);
        gaussian_kernel(self.smoothing_sigma, side)
    }
}

/// An `S x S` displacement patch.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionPatch {
    pub size: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub eta: f64,
}

fn smooth_patch(noise: &[f64], size: usize, kernel: &Kernel2D) -> Result<Vec<f64>> {
    let plane = ImageBuffer::new(size, size, 1, noise.to_vec())?;
    Ok(convolve(&plane, kernel)?.data().to_vec())
}

fn patch_with_kernel(params: &ChakParams, kernel: &Kernel2D, rng: &mut RandomSource) -> Result<MotionPatch> {
    let n = params.patch_size * params.patch_size;
    let mut n1 = vec![0.0; n];
    let mut n2 = vec![0.0; n];
    rng.fill_standard_normal(&mut n1);
    rng.fill_standard_normal(&mut n2);
    let eta = rng.uniform_in(params.eta_range.0, params.eta_range.1);
    let dx = smooth_patch(&n1, params.patch_size, kernel)?.into_iter().map(|v| eta * v).collect();
    let dy = smooth_patch(&n2, params.patch_size, kernel)?.into_iter().map(|v| eta * v).collect();
    Ok(MotionPatch { size: params.patch_size, dx, dy, eta })
}

/// `eta * (G_sigma * N1, G_sigma * N2)` on an `S x S` support. Smoothing
/// happens inside the patch with reflect padding; the kernel is truncated to
/// the patch.
pub fn patch_motion_vector(params: &ChakParams, rng: &mut RandomSource) -> Result<MotionPatch> {
    params.validate()?;
    patch_with_kernel(params, &params.smoothing_kernel()?, rng)
}

/// Adds `patch` into `field` centred at `(cy, cx)`; taps outside the image are
/// dropped.
pub fn place_patch(field: &mut MotionField, patch: &MotionPatch, (cy, cx): (usize, usize)) {
    let (h, w) = field.dims();
    let half = (patch.size / 2) as isize;
    let (fdx, fdy) = field.components_mut();
    for i in 0..patch.size {
        let y = cy as isize - half + i as isize;
        if y < 0 || y >= h as isize {
            continue;
        }
        for j in 0..patch.size {
            let x = cx as isize - half + j as isize;
            if x < 0 || x >= w as isize {
                continue;
            }
            let t = y as usize * w + x as usize;
            fdx[t] += patch.dx[i * patch.size + j];
            fdy[t] += patch.dy[i * patch.size + j];
        }
    }
}

/// Field plus the draws that produced it.
#[derive(Debug, Clone)]
pub struct ChakField {
    pub field: MotionField,
    pub iterations: usize,
    pub eta_min: f64,
    pub eta_max: f64,
}

/// Superposes `K ~ iterations` patches at uniformly drawn centres.
pub fn build_motion_field(params: &ChakParams, height: usize, width: usize, rng: &mut RandomSource) -> Result<ChakField> {
    params.validate()?;
    ensure!(
        height >= params.patch_size && width >= params.patch_size,
        "image {height}x{width} is smaller than patch size {}",
        params.patch_size
    );
    let kernel = params.smoothing_kernel()?;
    let iterations = params.iterations.draw(rng);
    let mut field = MotionField::zeros(height, width);
    let (mut eta_min, mut eta_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..iterations {
        let cy = rng.index(height);
        let cx = rng.index(width);
        let patch = patch_with_kernel(params, &kernel, rng)?;
        eta_min = eta_min.min(patch.eta);
        eta_max = eta_max.max(patch.eta);
        place_patch(&mut field, &patch, (cy, cx));
    }
    if iterations == 0 {
        (eta_min, eta_max) = (0.0, 0.0);
    }
    Ok(ChakField { field, iterations, eta_min, eta_max })
}

/// `T = D(H(I)) + n`, clipped to `[0, 1]`.
pub fn degrade_chak(img: &ImageBuffer, params: &ChakParams, rng: &mut RandomSource) -> Result<Degraded> {
    params.validate()?;
    let (h, w) = img.dims();
    let mut trace = Vec::with_capacity(4);

    let side = default_side(params.blur_sigma, h.min(w));
    let blurred = convolve(img, &gaussian_kernel(params.blur_sigma, side)?)?;
    trace.push(Stage::Blur);

    let built = build_motion_field(params, h, w, rng)?;
    let warped = warp(&blurred, &built.field)?;
    trace.push(Stage::Warp);

    let noisy = add_noise(&warped, params.noise, rng)?;
    trace.push(Stage::Noise);

    let image = noisy.clipped();
    trace.push(Stage::Clip);

    Ok(Degraded {
        image,
        field: built.field,
        trace,
        drawn: DrawnParams::Chak {
            iterations: built.iterations,
            eta_min: built.eta_min,
            eta_max: built.eta_max,
            blur_sigma: params.blur_sigma,
        },
    })
}
