//! Per-pixel displacement fields and their binary file format.

use std::io::{Read, Write};

use crate::error::{ensure, Error, Result};

const FIELD_MAGIC: &[u8; 4] = b"TSFL";

/// Per-pixel 2-vector displacement map in pixel units, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    height: usize,
    width: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl MotionField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, dx: vec![0.0; height * width], dy: vec![0.0; height * width] }
    }

    pub fn new(height: usize, width: usize, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        ensure!(
            dx.len() == height * width && dy.len() == height * width,
            "field components must have {height}x{width} entries"
        );
        ensure!(
            dx.iter().chain(&dy).all(|v| v.is_finite()),
            "field contains non-finite displacements"
        );
        Ok(Self { height, width, dx, dy })
    }

    pub fn constant(height: usize, width: usize, dx: f64, dy: f64) -> Self {
        Self { height, width, dx: vec![dx; height * width], dy: vec![dy; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    pub(crate) fn components_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.dx, &mut self.dy)
    }

    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    /// Multiplies both components by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            dx: self.dx.iter().map(|v| v * s).collect(),
            dy: self.dy.iter().map(|v| v * s).collect(),
        }
    }

    pub fn magnitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.dx.iter().zip(&self.dy).map(|(x, y)| x.hypot(*y))
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitudes().fold(0.0, f64::max)
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.magnitudes().sum::<f64>() / (self.height * self.width) as f64
    }

    pub fn is_zero(&self) -> bool {
        self.dx.iter().chain(&self.dy).all(|v| *v == 0.0)
    }

    /// Writes the field as `TSFL`, u32 height, u32 width, then
    /// `height * width` little-endian f32 pairs `(dx, dy)`.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(12 + 8 * self.dx.len());
        buf.extend_from_slice(FIELD_MAGIC);
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        for (x, y) in self.dx.iter().zip(&self.dy) {
            buf.extend_from_slice(&(*x as f32).to_le_bytes());
            buf.extend_from_slice(&(*y as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |reason: &str| Error::Format { kind: "motion field", reason: reason.to_string() };
        let mut header = [0u8; 12];
        r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
        if &header[..4] != FIELD_MAGIC {
            return Err(bad("bad magic"));
        }
        let height = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let n = height.checked_mul(width).ok_or_else(|| bad("dimensions overflow"))?;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != 8 * n {
            return Err(bad("payload length does not match dimensions"));
        }
        let mut dx = Vec::with_capacity(n);
        let mut dy = Vec::with_capacity(n);
        for pair in body.chunks_exact(8) {
            dx.push(f32::from_le_bytes(pair[..4].try_into().unwrap()) as f64);
            dy.push(f32::from_le_bytes(pair[4..].try_into().unwrap()) as f64);
        }
        Self::new(height, width, dx, dy)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
