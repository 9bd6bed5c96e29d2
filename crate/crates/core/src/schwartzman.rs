//! Tilt-only distortion from spatially autocorrelated displacement fields.
//!
//! A target autocorrelation `C(v) = E[e(p)^T e(p+v)]` is derived from the
//! optical geometry, then two independent stationary Gaussian fields with
//! that correlation are synthesized spectrally and used to warp the image.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::degradation::{Degraded, DrawnParams, Stage};
use crate::error::{ensure, Result};
use crate::kernel::{default_side, gaussian_kernel};
use crate::ops::{add_noise, convolve, warp, NoiseParams};
use crate::{fft, ImageBuffer, MotionField, RandomSource};

/// Per-axis Z-tilt angle variance is `TILT_ANGLE_COEFF * cn2 * L * D^(-1/3)`
/// rad^2; equals `0.182 * 0.423 * (2 pi)^2`.
pub const TILT_ANGLE_COEFF: f64 = 3.039_285_457_689_061;

/// `kappa` in `C(0) = kappa * cn2 * L * D^(-1/3) / pitch^2`: both axes of
/// tilt variance imaged through `focal_length`.
pub fn tilt_variance_scale(focal_length: f64) -> f64 {
    2.0 * TILT_ANGLE_COEFF * focal_length * focal_length
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchwartzmanParams {
    pub lens_diameter: f64,
    pub pixel_pitch: f64,
    /// Inclusive range the propagation distance is drawn from, metres.
    pub distance_range: (f64, f64),
    pub cn2: f64,
    /// Maps field angles onto the sensor. The default puts the per-axis
    /// displacement between about 3 px (2 km) and 5 px (5 km).
    pub focal_length: f64,
    pub profile: RadialProfile,
    /// Optional pre-warp Gaussian blur; off by default.
    pub blur_sigma: Option<f64>,
    pub noise: NoiseParams,
}

impl Default for SchwartzmanParams {
    fn default() -> Self {
        Self {
            lens_diameter: 0.53,
            pixel_pitch: 4e-6,
            distance_range: (2000.0, 5000.0),
            cn2: 3.6e-13,
            focal_length: 0.25,
            profile: RadialProfile::Gaussian,
            blur_sigma: None,
            noise: NoiseParams::NONE,
        }
    }
}

impl SchwartzmanParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lens_diameter", self.lens_diameter),
            ("pixel_pitch", self.pixel_pitch),
            ("focal_length", self.focal_length),
        ] {
            ensure!(v > 0.0 && v.is_finite(), "{name} must be positive, got {v}");
        }
        let (lo, hi) = self.distance_range;
        ensure!(0.0 < lo && lo <= hi && hi.is_finite(), "distance range must be positive and ordered, got [{lo}, {hi}]");
        ensure!(self.cn2 >= 0.0 && self.cn2.is_finite(), "cn2 must be >= 0, got {}", self.cn2);
        if let Some(s) = self.blur_sigma {
            ensure!(s >= 0.0 && s.is_finite(), "blur sigma must be >= 0");
        }
        self.noise.validate()
    }
}

/// Normalized radial correlation shape `C(r) / C(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadialProfile {
    /// `exp(-r^2 / rho^2)`
    Gaussian,
    /// `exp(-r / rho)`
    Exponential,
}

impl RadialProfile {
    pub fn eval(self, r: f64, rho: f64) -> f64 {
        match self {
            RadialProfile::Gaussian => (-(r * r) / (rho * rho)).exp(),
            RadialProfile::Exponential => (-r / rho).exp(),
        }
    }
}

/// Stationary isotropic model of the displacement autocorrelation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutocorrModel {
    /// `C(0) = E[|e(p)|^2]`, summed over both components, px^2.
    pub variance: f64,
    /// Profile length scale, px.
    pub correlation_length: f64,
    pub profile: RadialProfile,
}

impl AutocorrModel {
    pub fn new(variance: f64, correlation_length: f64, profile: RadialProfile) -> Result<Self> {
        ensure!(variance >= 0.0 && variance.is_finite(), "variance must be >= 0, got {variance}");
        ensure!(
            variance == 0.0 || (correlation_length > 0.0 && correlation_length.is_finite()),
            "correlation length must be positive, got {correlation_length}"
        );
        Ok(Self { variance, correlation_length, profile })
    }

    /// `C(r)` for the vector field.
    pub fn autocorrelation(&self, r: f64) -> f64 {
        self.variance * self.normalized(r)
    }

    /// `C(r) / C(0)`.
    pub fn normalized(&self, r: f64) -> f64 {
        if self.variance == 0.0 {
            return if r == 0.0 { 1.0 } else { 0.0 };
        }
        self.profile.eval(r, self.correlation_length)
    }
}

/// Displacement autocorrelation for a path of length `distance` metres.
///
/// `C(0) = kappa * cn2 * L * D^(-1/3) / pitch^2` (see [`tilt_variance_scale`]).
/// Tilts of two field points decorrelate once their ray bundles separate by
/// about one aperture over the path, so the correlation length is the angle
/// `D / L` imaged through the focal length, in pixels.
pub fn target_autocorrelation(params: &SchwartzmanParams, distance: f64) -> Result<AutocorrModel> {
    params.validate()?;
    ensure!(distance > 0.0 && distance.is_finite(), "propagation distance must be positive");
    if params.cn2 == 0.0 {
        return AutocorrModel::new(0.0, 0.0, params.profile);
    }
    let variance = tilt_variance_scale(params.focal_length)
        * params.cn2
        * distance
        * params.lens_diameter.powf(-1.0 / 3.0)
        / (params.pixel_pitch * params.pixel_pitch);
    let rho = params.lens_diameter / distance * params.focal_length / params.pixel_pitch;
    AutocorrModel::new(variance, rho, params.profile)
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
fn fft_friendly(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k % p == 0 {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

/// Amplitude filter `sqrt(S)` where `S` is the spectrum of the per-component
/// covariance sampled on a `ph x pw` torus.
fn synthesis_filter(model: &AutocorrModel, ph: usize, pw: usize) -> Vec<f64> {
    let per_component = model.variance / 2.0;
    let mut cov = Vec::with_capacity(ph * pw);
    for y in 0..ph {
        let dy = y.min(ph - y) as f64;
        for x in 0..pw {
            let dx = x.min(pw - x) as f64;
            cov.push(Complex64::new(per_component * model.normalized(dx.hypot(dy)), 0.0));
        }
    }
    fft::forward(&mut cov, ph, pw);
    cov.iter().map(|s| s.re.max(0.0).sqrt()).collect()
}

/// Precomputed spectral synthesizer for repeated draws at one model and size.
pub struct FieldSynthesizer {
    height: usize,
    width: usize,
    ph: usize,
    pw: usize,
    filter: Option<Vec<f64>>,
}

impl FieldSynthesizer {
    pub fn new(model: &AutocorrModel, height: usize, width: usize) -> Result<Self> {
        ensure!(height > 0 && width > 0, "field dimensions must be positive");
        if model.variance == 0.0 {
            return Ok(Self { height, width, ph: 0, pw: 0, filter: None });
        }
        let rho = model.correlation_length;
        ensure!(
            rho < height.min(width) as f64 / 2.0,
            "correlation length {rho:.2} px is not resolvable on a {height}x{width} field"
        );
        // Pad so wrap-around correlation across the crop is negligible.
        let margin = (4.0 * rho).ceil() as usize;
        let ph = fft_friendly(height + margin);
        let pw = fft_friendly(width + margin);
        Ok(Self { height, width, ph, pw, filter: Some(synthesis_filter(model, ph, pw)) })
    }

    pub fn sample(&self, rng: &mut RandomSource) -> MotionField {
        let (h, w) = (self.height, self.width);
        let Some(filter) = &self.filter else {
            return MotionField::zeros(h, w);
        };
        let (ph, pw) = (self.ph, self.pw);
        // Real and imaginary parts carry independent white noise; the filter is
        // real and even, so they stay independent through synthesis.
        let mut buf: Vec<Complex64> = (0..ph * pw)
            .map(|_| {
                let re = rng.standard_normal();
                let im = rng.standard_normal();
                Complex64::new(re, im)
            })
            .collect();
        fft::forward(&mut buf, ph, pw);
        buf.iter_mut().zip(filter).for_each(|(v, a)| *v *= a);
        fft::inverse(&mut buf, ph, pw);
        let mut dx = Vec::with_capacity(h * w);
        let mut dy = Vec::with_capacity(h * w);
        for y in 0..h {
            for v in &buf[y * pw..y * pw + w] {
                dx.push(v.re);
                dy.push(v.im);
            }
        }
        MotionField::new(h, w, dx, dy).expect("synthesized field is finite")
    }
}

/// One draw of a zero-mean stationary displacement field with the model's
/// autocorrelation; `dx` and `dy` are independent.
pub fn sample_distortion_field(model: &AutocorrModel, height: usize, width: usize, rng: &mut RandomSource) -> Result<MotionField> {
    Ok(FieldSynthesizer::new(model, height, width)?.sample(rng))
}

pub fn degrade_schwartzman(img: &ImageBuffer, params: &SchwartzmanParams, rng: &mut RandomSource) -> Result<Degraded> {
    params.validate()?;
    let (h, w) = img.dims();
    let distance = rng.uniform_in(params.distance_range.0, params.distance_range.1);
    let model = target_autocorrelation(params, distance)?;
    let field = sample_distortion_field(&model, h, w, rng)?;

    let mut trace = Vec::new();
    let mut cur = img.clone();
    if let Some(sigma) = params.blur_sigma {
        cur = convolve(&cur, &gaussian_kernel(sigma, default_side(sigma, h.min(w)))?)?;
        trace.push(Stage::Blur);
    }
    cur = warp(&cur, &field)?;
    trace.push(Stage::Warp);
    if params.noise.sigma > 0.0 {
        cur = add_noise(&cur, params.noise, rng)?;
        trace.push(Stage::Noise);
    }
    let image = cur.clipped();
    trace.push(Stage::Clip);

    Ok(Degraded {
        image,
        field,
        trace,
        drawn: DrawnParams::Schwartzman {
            propagation_distance: distance,
            variance: model.variance,
            correlation_length: model.correlation_length,
        },
    })
}
