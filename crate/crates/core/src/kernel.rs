//! Square convolution kernels and Gaussian blur constructors.

use crate::error::{ensure, Result};

/// Odd-sided square kernel, row-major taps, centre at `(side/2, side/2)`.
///
/// Blur kernels built here are non-negative and sum to one; signed kernels
/// (e.g. principal-component basis elements) are also representable.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    side: usize,
    weights: Vec<f64>,
}

impl Kernel2D {
    pub fn new(side: usize, weights: Vec<f64>) -> Result<Self> {
        ensure!(side % 2 == 1, "kernel side must be odd and positive, got {side}");
        ensure!(
            weights.len() == side * side,
            "kernel has {} taps, expected {}",
            weights.len(),
            side * side
        );
        ensure!(weights.iter().all(|w| w.is_finite()), "kernel taps must be finite");
        Ok(Self { side, weights })
    }

    /// Unit impulse of the given side.
    pub fn delta(side: usize) -> Result<Self> {
        ensure!(side % 2 == 1, "kernel side must be odd and positive, got {side}");
        let mut weights = vec![0.0; side * side];
        weights[(side / 2) * side + side / 2] = 1.0;
        Ok(Self { side, weights })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn radius(&self) -> usize {
        self.side / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Tap at row `i`, column `j`.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.side + j]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        self.weights.iter().all(|w| *w >= 0.0) && (self.sum() - 1.0).abs() <= tol
    }

    /// Rescales taps to sum to one.
    pub fn normalized(mut self) -> Result<Self> {
        let s = self.sum();
        ensure!(s.abs() > f64::MIN_POSITIVE, "cannot normalize a kernel with zero sum");
        self.weights.iter_mut().for_each(|w| *w /= s);
        Ok(self)
    }

    /// Transposed taps (rows become columns).
    pub fn transposed(&self) -> Self {
        let n = self.side;
        let weights = (0..n * n).map(|k| self.weights[(k % n) * n + k / n]).collect();
        Self { side: n, weights }
    }

    /// Centre-crops to a smaller odd side.
    pub fn cropped(&self, side: usize) -> Result<Self> {
        ensure!(side % 2 == 1 && side <= self.side, "cannot crop side {} to {side}", self.side);
        let off = (self.side - side) / 2;
        let mut weights = Vec::with_capacity(side * side);
        for i in 0..side {
            let row = (i + off) * self.side + off;
            weights.extend_from_slice(&self.weights[row..row + side]);
        }
        Ok(Self { side, weights })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.side, other.side, "comparing kernels of different sides");
        self.weights.iter().zip(&other.weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Default kernel side for a Gaussian of width `sigma`: `2*ceil(3*sigma) + 1`,
/// capped at the largest odd value not exceeding `max_side`.
pub fn default_side(sigma: f64, max_side: usize) -> usize {
    let side = 2 * (3.0 * sigma).ceil().max(0.0) as usize + 1;
    let cap = if max_side % 2 == 1 { max_side } else { max_side.saturating_sub(1).max(1) };
    side.min(cap)
}

/// Isotropic Gaussian taps `exp(-(x^2 + y^2) / (2 sigma^2))`, normalized.
/// `sigma == 0` yields the unit impulse.
pub fn gaussian_kernel(sigma: f64, side: usize) -> Result<Kernel2D> {
    ensure!(sigma >= 0.0 && sigma.is_finite(), "gaussian sigma must be finite and >= 0, got {sigma}");
    ensure!(side % 2 == 1, "kernel side must be odd and positive, got {side}");
    if sigma == 0.0 {
        return Kernel2D::delta(side);
    }
    let r = (side / 2) as f64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut weights = Vec::with_capacity(side * side);
    for i in 0..side {
        let y = i as f64 - r;
        for j in 0..side {
            let x = j as f64 - r;
            weights.push((-(x * x + y * y) * inv).exp());
        }
    }
    Kernel2D::new(side, weights)?.normalized()
}

/// Elliptical Gaussian with standard deviation `sigma_x` along the axis at
/// `angle` radians from the +x (column) direction and `sigma_y` across it.
pub fn anisotropic_gaussian_kernel(sigma_x: f64, sigma_y: f64, angle: f64, side: usize) -> Result<Kernel2D> {
    ensure!(
        sigma_x > 0.0 && sigma_y > 0.0 && sigma_x.is_finite() && sigma_y.is_finite(),
        "anisotropic sigmas must be positive, got ({sigma_x}, {sigma_y})"
    );
    ensure!(side % 2 == 1, "kernel side must be odd and positive, got {side}");
    let r = (side / 2) as f64;
    let (s, c) = angle.sin_cos();
    let (ax, ay) = (1.0 / (2.0 * sigma_x * sigma_x), 1.0 / (2.0 * sigma_y * sigma_y));
    let mut weights = Vec::with_capacity(side * side);
    for i in 0..side {
        let y = i as f64 - r;
        for j in 0..side {
            let x = j as f64 - r;
            let u = x * c + y * s;
            let v = -x * s + y * c;
            weights.push((-(u * u * ax + v * v * ay)).exp());
        }
    }
    Kernel2D::new(side, weights)?.normalized()
}
