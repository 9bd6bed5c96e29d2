//! Synthesis of atmospheric-turbulence-degraded images.
//!
//! Every simulator follows `T = D(H(I)) + n`: a blur stage `H`, a geometric
//! warp `D` and additive noise `n`, clipped to `[0, 1]` at the end. All
//! randomness flows through a seeded [`RandomSource`], so a seed and a
//! parameter set reproduce an output exactly.
//!
//! | module | blur | warp |
//! |---|---|---|
//! | [`chak`] | fixed Gaussian | random patch motion vectors |
//! | [`schwartzman`] | optional Gaussian | Gaussian field with a target autocorrelation |
//! | [`chimitt`] | per-block Zernike PSFs | correlated block tilts |
//! | [`mao`] | principal-component PSF basis | correlated block tilts |
//! | [`mei`] | Gaussian plus down/up resample | elastic field |

pub mod chak;
pub mod chimitt;
pub mod degradation;
mod error;
pub mod fft;
mod field;
mod image;
pub mod io;
pub mod kernel;
pub mod mao;
pub mod mei;
pub mod ops;
pub mod optics;
mod rng;
pub mod schwartzman;
pub mod validation;

pub use crate::image::ImageBuffer;
pub use degradation::{BlurKind, Degraded, DrawnParams, Stage};
pub use error::{Error, Result};
pub use field::MotionField;
pub use kernel::Kernel2D;
pub use rng::{derive_seed, splitmix64, RandomSource};
