//! Elastic augmentation: Gaussian blur (isotropic or anisotropic) and a
//! down-up resample as the blur stage, a smooth random elastic field as the
//! geometric stage.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::degradation::{BlurKind, Degraded, DrawnParams, Stage};
use crate::error::{ensure, Result};
use crate::kernel::{anisotropic_gaussian_kernel, default_side, gaussian_kernel};
use crate::ops::{add_noise, convolve, resample, warp, NoiseParams, MIN_RESAMPLE_FACTOR};
use crate::{ImageBuffer, MotionField, RandomSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElasticParams {
    /// Side of the blur kernel; reduced to fit images smaller than this.
    pub blur_kernel_size: usize,
    /// Kernel shapes to choose from, uniformly.
    pub kernel_types: Vec<BlurKind>,
    pub blur_sigma_range: (f64, f64),
    pub downsample_range: (f64, f64),
    pub elastic_alpha_range: (f64, f64),
    pub elastic_sigma_range: (f64, f64),
    pub noise: NoiseParams,
}

impl Default for ElasticParams {
    fn default() -> Self {
        Self {
            blur_kernel_size: 41,
            kernel_types: vec![BlurKind::Isotropic, BlurKind::Anisotropic],
            blur_sigma_range: (1.0, 25.0),
            downsample_range: (0.125, 1.0),
            elastic_alpha_range: (0.0, 50.0),
            elastic_sigma_range: (4.0, 5.0),
            noise: NoiseParams::NONE,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    ensure!(lo.is_finite() && hi.is_finite() && lo <= hi, "{name} range must be ordered and finite, got [{lo}, {hi}]");
    Ok(())
}

impl ElasticParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.blur_kernel_size % 2 == 1, "blur kernel size must be odd, got {}", self.blur_kernel_size);
        ensure!(!self.kernel_types.is_empty(), "at least one kernel type is required");
        check_range("blur sigma", self.blur_sigma_range)?;
        check_range("downsample", self.downsample_range)?;
        check_range("elastic alpha", self.elastic_alpha_range)?;
        check_range("elastic sigma", self.elastic_sigma_range)?;
        ensure!(self.blur_sigma_range.0 > 0.0, "blur sigma must be positive");
        ensure!(
            self.downsample_range.0 >= MIN_RESAMPLE_FACTOR && self.downsample_range.1 <= 1.0,
            "downsample range must lie within [1/8, 1]"
        );
        ensure!(self.elastic_alpha_range.0 >= 0.0, "elastic alpha must be >= 0");
        ensure!(self.elastic_sigma_range.0 > 0.0, "elastic sigma must be positive");
        self.noise.validate()
    }
}

/// Parameters drawn for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticDraw {
    pub kernel: BlurKind,
    pub blur_sigma_x: f64,
    pub blur_sigma_y: f64,
    pub blur_angle: f64,
    pub downsample: f64,
    pub elastic_alpha: f64,
    pub elastic_sigma: f64,
}

/// Draws every range parameter uniformly and independently. Isotropic
/// kernels report `sigma_y == sigma_x` and a zero angle.
pub fn draw_elastic_params(params: &ElasticParams, rng: &mut RandomSource) -> Result<ElasticDraw> {
    params.validate()?;
    let kernel = if params.kernel_types.len() == 1 {
        params.kernel_types[0]
    } else {
        params.kernel_types[rng.index(params.kernel_types.len())]
    };
    let (lo, hi) = params.blur_sigma_range;
    let blur_sigma_x = rng.uniform_in(lo, hi);
    let (blur_sigma_y, blur_angle) = match kernel {
        BlurKind::Isotropic => (blur_sigma_x, 0.0),
        BlurKind::Anisotropic => (rng.uniform_in(lo, hi), rng.uniform_in(0.0, PI)),
    };
    let downsample = rng.uniform_in(params.downsample_range.0, params.downsample_range.1);
    let elastic_alpha = rng.uniform_in(params.elastic_alpha_range.0, params.elastic_alpha_range.1);
    let elastic_sigma = rng.uniform_in(params.elastic_sigma_range.0, params.elastic_sigma_range.1);
    Ok(ElasticDraw { kernel, blur_sigma_x, blur_sigma_y, blur_angle, downsample, elastic_alpha, elastic_sigma })
}

/// Uniform `[-1, 1]` noise for each component in turn, smoothed by a Gaussian of width
/// `sigma`, rescaled so the largest displacement has magnitude exactly one
/// (up to rounding), then multiplied by `alpha`.
pub fn elastic_field(alpha: f64, sigma: f64, height: usize, width: usize, rng: &mut RandomSource) -> Result<MotionField> {
    ensure!(alpha >= 0.0 && alpha.is_finite(), "elastic alpha must be >= 0, got {alpha}");
    ensure!(sigma > 0.0 && sigma.is_finite(), "elastic sigma must be positive, got {sigma}");
    ensure!(height > 0 && width > 0, "field must be non-empty");
    let n = height * width;
    let kernel = gaussian_kernel(sigma, default_side(sigma, height.min(width)))?;
    let mut smooth = || -> Result<Vec<f64>> {
        let raw = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        Ok(convolve(&ImageBuffer::new(height, width, 1, raw)?, &kernel)?.data().to_vec())
    };
    let dx = smooth()?;
    let dy = smooth()?;
    let unit = MotionField::new(height, width, dx, dy)?;
    let peak = unit.max_magnitude();
    if peak == 0.0 || alpha == 0.0 {
        return Ok(MotionField::zeros(height, width));
    }
    Ok(unit.scaled(1.0 / peak).scaled(alpha))
}

/// Blur, resample, elastic warp, noise, clip.
pub fn degrade_mei(img: &ImageBuffer, params: &ElasticParams, rng: &mut RandomSource) -> Result<Degraded> {
    let draw = draw_elastic_params(params, rng)?;
    let (h, w) = img.dims();
    let fit = params.blur_kernel_size.min(h.min(w));
    let side = if fit % 2 == 1 { fit } else { fit - 1 };
    let kernel = match draw.kernel {
        BlurKind::Isotropic => gaussian_kernel(draw.blur_sigma_x, side)?,
        BlurKind::Anisotropic => anisotropic_gaussian_kernel(draw.blur_sigma_x, draw.blur_sigma_y, draw.blur_angle, side)?,
    };
    let blurred = convolve(img, &kernel)?;
    let resampled = resample(&blurred, draw.downsample)?;
    let field = elastic_field(draw.elastic_alpha, draw.elastic_sigma, h, w, rng)?;
    let warped = warp(&resampled, &field)?;
    let mut trace = vec![Stage::Blur, Stage::Resample, Stage::Warp];
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
        drawn: DrawnParams::Mei {
            kernel: draw.kernel,
            blur_sigma_x: draw.blur_sigma_x,
            blur_sigma_y: draw.blur_sigma_y,
            blur_angle: draw.blur_angle,
            downsample: draw.downsample,
            elastic_alpha: draw.elastic_alpha,
            elastic_sigma: draw.elastic_sigma,
        },
    })
}
