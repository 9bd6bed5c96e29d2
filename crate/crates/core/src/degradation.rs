//! Output of a simulator run: the distorted image, the geometric field that
//! was applied, the operators in the order they ran, and the drawn parameters.

use serde::{Deserialize, Serialize};

use crate::{ImageBuffer, MotionField};

/// One operator in a degradation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Blur,
    SpatiallyVaryingBlur,
    Resample,
    Warp,
    Noise,
    Clip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlurKind {
    Isotropic,
    Anisotropic,
}

/// Per-sample parameters resolved from the configured ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum DrawnParams {
    Chak {
        iterations: usize,
        eta_min: f64,
        eta_max: f64,
        blur_sigma: f64,
    },
    Schwartzman {
        propagation_distance: f64,
        variance: f64,
        correlation_length: f64,
    },
    Chimitt {
        propagation_length: f64,
        fried_parameter: f64,
        blocks: (usize, usize),
    },
    Mao {
        propagation_length: f64,
        fried_parameter: f64,
        distortion_strength: f64,
        num_basis: usize,
    },
    Mei {
        kernel: BlurKind,
        blur_sigma_x: f64,
        blur_sigma_y: f64,
        blur_angle: f64,
        downsample: f64,
        elastic_alpha: f64,
        elastic_sigma: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Degraded {
    pub image: ImageBuffer,
    pub field: MotionField,
    pub trace: Vec<Stage>,
    pub drawn: DrawnParams,
}
