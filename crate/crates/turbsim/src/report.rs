//! Statistical self-checks behind `turbsim validate`.

use rayon::prelude::*;
use serde::Serialize;
use turbsim_core::chak::{build_motion_field, ChakParams};
use turbsim_core::chimitt::{build_tilt_correlation, sample_tilts, BlockGrid, ChimittParams, TiltCorrelation};
use turbsim_core::mao::{MaoParams, MaoSimulator};
use turbsim_core::mei::{draw_elastic_params, elastic_field, ElasticParams};
use turbsim_core::optics::PsfGenerator;
use turbsim_core::schwartzman::{target_autocorrelation, FieldSynthesizer, SchwartzmanParams};
use turbsim_core::validation::{empirical_autocorrelation, field_moment_report, kernel_report, RadialCurve};
use turbsim_core::{derive_seed, BlurKind, RandomSource};

use crate::config::MethodName;
use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Passes when `value <= threshold`.
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self { name: name.to_string(), value, threshold, passed: value <= threshold }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub method: MethodName,
    pub samples: usize,
    pub seed: u64,
    pub image_size: usize,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Runs the checks for `method` at its default parameters on `samples`
/// independent draws.
pub fn validate_method(method: MethodName, samples: usize, seed: u64, image_size: usize) -> Result<ValidationReport> {
    if samples < 2 {
        return Err(PipelineError::Config("validation needs at least 2 samples".into()));
    }
    let checks = match method {
        MethodName::Chak => chak_checks(samples, seed, image_size)?,
        MethodName::Schwartzman => schwartzman_checks(samples, seed, image_size)?,
        MethodName::Chimitt => chimitt_checks(samples, seed, image_size)?,
        MethodName::Mao => mao_checks(samples, seed, image_size)?,
        MethodName::Mei => mei_checks(samples, seed, image_size)?,
    };
    Ok(ValidationReport { method, samples, seed, image_size, passed: checks.iter().all(|c| c.passed), checks })
}

fn chak_checks(samples: usize, seed: u64, size: usize) -> Result<Vec<Check>> {
    let params = ChakParams::default();
    let fields = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = RandomSource::new(derive_seed(seed, i as u64));
            Ok(build_motion_field(&params, size, size, &mut rng)?.field)
        })
        .collect::<Result<Vec<_>>>()?;
    // Per-draw spatial means are independent; their average must sit
    // within a 3-sigma band of zero.
    let means: Vec<[f64; 2]> =
        fields.iter().map(|f| field_moment_report(std::slice::from_ref(f)).map(|m| m.mean)).collect::<turbsim_core::Result<_>>()?;
    let n = samples as f64;
    let mut checks = Vec::new();
    for (axis, name) in ["dx", "dy"].iter().enumerate() {
        let mu = means.iter().map(|m| m[axis]).sum::<f64>() / n;
        let sd = (means.iter().map(|m| (m[axis] - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let band = 3.0 * sd / n.sqrt();
        checks.push(Check::at_most(&format!("{name} mean / 3-sigma band"), mu.abs() / band.max(f64::MIN_POSITIVE), 1.0));
    }
    Ok(checks)
}

fn schwartzman_checks(samples: usize, seed: u64, size: usize) -> Result<Vec<Check>> {
    let params = SchwartzmanParams::default();
    let distance = 0.5 * (params.distance_range.0 + params.distance_range.1);
    let model = target_autocorrelation(&params, distance)?;
    let synth = FieldSynthesizer::new(&model, size, size)?;
    let fields: Vec<_> = (0..samples)
        .into_par_iter()
        .map(|i| synth.sample(&mut RandomSource::new(derive_seed(seed, i as u64))))
        .collect();
    let max_lag = ((2.0 * model.correlation_length).floor() as usize).min(size / 2 - 1);
    let empirical = empirical_autocorrelation(&fields, max_lag)?;
    let target = RadialCurve::from_model(max_lag, |r| model.autocorrelation(r));
    Ok(vec![
        Check::at_most(
            "lag-0 variance relative error",
            (empirical.values[0] - target.values[0]).abs() / target.values[0],
            0.05,
        ),
        Check::at_most("max relative error up to 2 correlation lengths", empirical.max_relative_error(&target, max_lag), 0.10),
    ])
}

fn tilt_covariance_error(corr: &TiltCorrelation, samples: usize, seed: u64) -> f64 {
    let target = corr.full_covariance();
    let n = target.nrows();
    let draws: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let d = sample_tilts(corr, &mut RandomSource::new(derive_seed(seed, i as u64)));
            d.coeffs.iter().map(|c| c[0]).chain(d.coeffs.iter().map(|c| c[1])).collect()
        })
        .collect();
    let mut diff = 0.0;
    let mut norm = 0.0;
    for a in 0..n {
        for b in 0..n {
            let est = draws.iter().map(|d| d[a] * d[b]).sum::<f64>() / samples as f64;
            diff += (est - target[(a, b)]).powi(2);
            norm += target[(a, b)].powi(2);
        }
    }
    (diff / norm).sqrt()
}

fn psf_checks(gen: &PsfGenerator, corr: &TiltCorrelation, samples: usize, seed: u64) -> Result<Vec<Check>> {
    let psfs = (0..samples.min(64))
        .into_par_iter()
        .map(|i| {
            let mut rng = RandomSource::new(derive_seed(seed ^ 0x5053_4621, i as u64));
            let mut c = vec![0.0, 0.0];
            c.extend(corr.inter_mode().sample(&mut rng));
            Ok(gen.psf(&c)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let stats = kernel_report(&psfs)?;
    Ok(vec![
        Check::at_most("max |PSF sum - 1|", stats.iter().map(|s| (s.sum - 1.0).abs()).fold(0.0, f64::max), 1e-5),
        Check::at_most("negative PSF taps", stats.iter().map(|s| s.negative_taps).sum::<usize>() as f64, 0.0),
    ])
}

fn chimitt_checks(samples: usize, seed: u64, size: usize) -> Result<Vec<Check>> {
    let params = ChimittParams::default();
    let grid = BlockGrid::new(size, size, params.optics.block_size)?;
    let corr = build_tilt_correlation(&params, &grid)?;
    let gen = PsfGenerator::new(&params.system(), params.optics.num_modes, params.optics.psf_side, params.optics.pupil_grid)?;
    let mut checks =
        vec![Check::at_most("tilt covariance relative Frobenius error", tilt_covariance_error(&corr, samples, seed), 0.05)];
    checks.extend(psf_checks(&gen, &corr, samples, seed)?);
    Ok(checks)
}

fn mao_checks(samples: usize, seed: u64, size: usize) -> Result<Vec<Check>> {
    let params = MaoParams::default();
    let grid = BlockGrid::new(size, size, params.optics.block_size)?;
    let corr = params.tilt_correlation(&grid)?;
    let gen = PsfGenerator::new(&params.system(), params.optics.num_modes, params.optics.psf_side, params.optics.pupil_grid)?;
    let mut checks =
        vec![Check::at_most("tilt covariance relative Frobenius error", tilt_covariance_error(&corr, samples, seed), 0.05)];
    checks.extend(psf_checks(&gen, &corr, samples, seed)?);
    let sim = MaoSimulator::new(params)?;
    let kernels = sim.basis().kernels();
    let mut gram_err: f64 = 0.0;
    for (i, a) in kernels.iter().enumerate() {
        for (j, b) in kernels.iter().enumerate() {
            let dot: f64 = a.weights().iter().zip(b.weights()).map(|(x, y)| x * y).sum();
            gram_err = gram_err.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    checks.push(Check::at_most("basis Gram matrix max deviation from identity", gram_err, 1e-6));
    checks.push(Check::at_most("mean kernel |sum - 1|", (sim.basis().mean_kernel().sum() - 1.0).abs(), 1e-9));
    Ok(checks)
}

fn mei_checks(samples: usize, seed: u64, size: usize) -> Result<Vec<Check>> {
    let params = ElasticParams::default();
    let inside = |v: f64, (lo, hi): (f64, f64)| (lo..=hi).contains(&v);
    let mut out_of_range = 0usize;
    let mut rng = RandomSource::new(seed);
    for _ in 0..samples {
        let d = draw_elastic_params(&params, &mut rng)?;
        let ok = inside(d.blur_sigma_x, params.blur_sigma_range)
            && inside(d.blur_sigma_y, params.blur_sigma_range)
            && (d.kernel == BlurKind::Isotropic || (0.0..=std::f64::consts::PI).contains(&d.blur_angle))
            && inside(d.downsample, params.downsample_range)
            && inside(d.elastic_alpha, params.elastic_alpha_range)
            && inside(d.elastic_sigma, params.elastic_sigma_range);
        out_of_range += usize::from(!ok);
    }
    let alpha = params.elastic_alpha_range.1;
    let worst = (0..samples.min(32))
        .into_par_iter()
        .map(|i| {
            let mut rng = RandomSource::new(derive_seed(seed, i as u64));
            let f = elastic_field(alpha, params.elastic_sigma_range.0, size, size, &mut rng)?;
            Ok((f.max_magnitude() - alpha).abs() / alpha)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(vec![
        Check::at_most("drawn parameters outside their ranges", out_of_range as f64, 0.0),
        Check::at_most("max displacement relative deviation from alpha", worst, 1e-12),
    ])
}
