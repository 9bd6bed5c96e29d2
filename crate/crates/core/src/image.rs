//! Planar floating-point image container.

use crate::error::{ensure, Result};

/// Planar image with intensities nominally in `[0, 1]`.
///
/// Data is stored channel-major, each channel row-major:
/// `data[c * height * width + y * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(height > 0 && width > 0, "image dimensions must be positive, got {height}x{width}");
        ensure!(channels == 1 || channels == 3, "channels must be 1 or 3, got {channels}");
        ensure!(
            data.len() == height * width * channels,
            "data length {} does not match {height}x{width}x{channels}",
            data.len()
        );
        ensure!(data.iter().all(|v| v.is_finite()), "image data contains non-finite values");
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
            .expect("filled image with valid shape")
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds a single-channel image by evaluating `f(y, x)` on every pixel.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, 1, data).expect("from_fn produced a valid image")
    }

    /// Stacks equally-sized single-channel planes into one image.
    pub fn from_planes(height: usize, width: usize, planes: Vec<Vec<f64>>) -> Result<Self> {
        let channels = planes.len();
        ensure!(
            planes.iter().all(|p| p.len() == height * width),
            "plane length does not match {height}x{width}"
        );
        Self::new(height, width, channels, planes.concat())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn planes(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.height * self.width)
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Applies `f` to each channel plane and reassembles the result.
    pub(crate) fn map_planes(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        let planes: Vec<Vec<f64>> = self.planes().map(|p| f(p)).collect();
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: planes.concat(),
        }
    }

    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self { data, ..*self }
    }

    /// Clamps every intensity into `[0, 1]`.
    pub fn clipped(&self) -> Self {
        self.with_data(self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    /// ITU-R BT.601 luma; grayscale input is returned unchanged.
    pub fn to_grayscale(&self) -> Self {
        if self.channels == 1 {
            return self.clone();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let data = r
            .iter()
            .zip(g)
            .zip(b)
            .map(|((r, g), b)| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect();
        Self { height: self.height, width: self.width, channels: 1, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Root-mean-square difference between two same-shaped images.
    pub fn rmse(&self, other: &Self) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "rmse of mismatched images");
        let ss: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).powi(2)).sum();
        (ss / self.data.len() as f64).sqrt()
    }

    /// RMSE of `self` against `reference`, relative to the RMS of `reference`.
    pub fn relative_rmse(&self, reference: &Self) -> f64 {
        let rms = (reference.data.iter().map(|v| v * v).sum::<f64>() / reference.data.len() as f64).sqrt();
        self.rmse(reference) / rms
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "diff of mismatched images");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}
