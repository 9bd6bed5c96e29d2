//! Pipeline configuration, read from TOML.
//!
//! ```toml
//! method = "chimitt"
//! input_dir = "clean"
//! output_dir = "out"
//! count = 100
//! image_size = 256
//! master_seed = 7
//! grayscale = true
//! emit_fields = true
//! preset = "r650"
//!
//! [chimitt]
//! cn2 = 2e-14
//! ```
//!
//! Only the table named by `method` is used; missing tables and keys take
//! their defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use turbsim_core::chak::ChakParams;
use turbsim_core::chimitt::ChimittParams;
use turbsim_core::io::BitDepth;
use turbsim_core::mao::MaoParams;
use turbsim_core::mei::ElasticParams;
use turbsim_core::schwartzman::SchwartzmanParams;

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Chak,
    Schwartzman,
    Chimitt,
    Mao,
    Mei,
}

impl MethodName {
    pub const ALL: [MethodName; 5] =
        [MethodName::Chak, MethodName::Schwartzman, MethodName::Chimitt, MethodName::Mao, MethodName::Mei];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Chak => "chak",
            MethodName::Schwartzman => "schwartzman",
            MethodName::Chimitt => "chimitt",
            MethodName::Mao => "mao",
            MethodName::Mei => "mei",
        }
    }
}

/// Propagation-length presets for the Zernike-based methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangePreset {
    R300,
    R650,
    R1000,
}

impl RangePreset {
    pub fn metres(self) -> f64 {
        match self {
            RangePreset::R300 => 300.0,
            RangePreset::R650 => 650.0,
            RangePreset::R1000 => 1000.0,
        }
    }
}

/// Resolved parameters of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "params", rename_all = "snake_case")]
pub enum MethodParams {
    Chak(ChakParams),
    Schwartzman(SchwartzmanParams),
    Chimitt(ChimittParams),
    Mao(MaoParams),
    Mei(ElasticParams),
}

impl MethodParams {
    pub fn name(&self) -> MethodName {
        match self {
            MethodParams::Chak(_) => MethodName::Chak,
            MethodParams::Schwartzman(_) => MethodName::Schwartzman,
            MethodParams::Chimitt(_) => MethodName::Chimitt,
            MethodParams::Mao(_) => MethodName::Mao,
            MethodParams::Mei(_) => MethodName::Mei,
        }
    }

    pub fn defaults(name: MethodName) -> Self {
        match name {
            MethodName::Chak => MethodParams::Chak(Default::default()),
            MethodName::Schwartzman => MethodParams::Schwartzman(Default::default()),
            MethodName::Chimitt => MethodParams::Chimitt(Default::default()),
            MethodName::Mao => MethodParams::Mao(Default::default()),
            MethodName::Mei => MethodParams::Mei(Default::default()),
        }
    }

    pub fn validate(&self) -> turbsim_core::Result<()> {
        match self {
            MethodParams::Chak(p) => p.validate(),
            MethodParams::Schwartzman(p) => p.validate(),
            MethodParams::Chimitt(p) => p.validate(),
            MethodParams::Mao(p) => p.validate(),
            MethodParams::Mei(p) => p.validate(),
        }
    }

    fn apply_preset(&mut self, preset: RangePreset) -> Result<()> {
        match self {
            MethodParams::Chimitt(p) => p.propagation_length = preset.metres(),
            MethodParams::Mao(p) => p.propagation_length = preset.metres(),
            other => {
                return Err(PipelineError::Config(format!(
                    "range presets apply to chimitt and mao, not {}",
                    other.name().as_str()
                )))
            }
        }
        Ok(())
    }
}

fn default_image_size() -> usize {
    256
}

/// On-disk form; see the module docs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    method: MethodName,
    input_dir: PathBuf,
    output_dir: PathBuf,
    count: usize,
    #[serde(default = "default_image_size")]
    image_size: usize,
    #[serde(default)]
    master_seed: u64,
    #[serde(default)]
    emit_fields: bool,
    #[serde(default)]
    grayscale: bool,
    #[serde(default)]
    bit_depth: BitDepth,
    #[serde(default)]
    workers: Option<usize>,
    #[serde(default)]
    preset: Option<RangePreset>,
    #[serde(default)]
    basis_cache: Option<PathBuf>,
    chak: Option<ChakParams>,
    schwartzman: Option<SchwartzmanParams>,
    chimitt: Option<ChimittParams>,
    mao: Option<MaoParams>,
    mei: Option<ElasticParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub params: MethodParams,
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    pub count: usize,
    pub image_size: usize,
    pub master_seed: u64,
    pub emit_fields: bool,
    pub grayscale: bool,
    pub bit_depth: BitDepth,
    /// Worker threads; all available cores when unset.
    pub workers: Option<usize>,
    /// Mao only: load the PSF basis from here if present, otherwise fit it
    /// and save it here.
    pub basis_cache: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn new(params: MethodParams, input_dir: impl Into<PathBuf>, output_dir: impl Into<PathBuf>, count: usize) -> Self {
        Self {
            params,
            input_dir: input_dir.into(),
            output_dir: output_dir.into(),
            count,
            image_size: default_image_size(),
            master_seed: 0,
            emit_fields: false,
            grayscale: false,
            bit_depth: BitDepth::Eight,
            workers: None,
            basis_cache: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)?;
        let mut params = match raw.method {
            MethodName::Chak => raw.chak.map(MethodParams::Chak),
            MethodName::Schwartzman => raw.schwartzman.map(MethodParams::Schwartzman),
            MethodName::Chimitt => raw.chimitt.map(MethodParams::Chimitt),
            MethodName::Mao => raw.mao.map(MethodParams::Mao),
            MethodName::Mei => raw.mei.map(MethodParams::Mei),
        }
        .unwrap_or_else(|| MethodParams::defaults(raw.method));
        if let Some(preset) = raw.preset {
            params.apply_preset(preset)?;
        }
        let cfg = Self {
            params,
            input_dir: raw.input_dir,
            output_dir: raw.output_dir,
            count: raw.count,
            image_size: raw.image_size,
            master_seed: raw.master_seed,
            emit_fields: raw.emit_fields,
            grayscale: raw.grayscale,
            bit_depth: raw.bit_depth,
            workers: raw.workers,
            basis_cache: raw.basis_cache,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(PipelineError::io(path))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.input_dir, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = cfg.basis_cache.as_mut().filter(|p| p.is_relative()) {
            *p = base.join(&*p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(PipelineError::Config("count must be >= 1".into()));
        }
        if self.image_size < 8 {
            return Err(PipelineError::Config(format!("image_size must be >= 8, got {}", self.image_size)));
        }
        if self.workers == Some(0) {
            return Err(PipelineError::Config("workers must be >= 1".into()));
        }
        if self.basis_cache.is_some() && self.params.name() != MethodName::Mao {
            return Err(PipelineError::Config("basis_cache only applies to method = \"mao\"".into()));
        }
        self.params.validate()?;
        Ok(())
    }
}
