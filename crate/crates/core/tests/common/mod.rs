#![allow(dead_code)]

use turbsim_core::{ImageBuffer, Kernel2D, MotionField, RandomSource};

pub fn random_image(h: usize, w: usize, seed: u64) -> ImageBuffer {
    let mut rng = RandomSource::new(seed);
    let data = (0..h * w).map(|_| rng.uniform()).collect();
    ImageBuffer::new(h, w, 1, data).unwrap()
}

pub fn random_kernel(side: usize, seed: u64) -> Kernel2D {
    let mut rng = RandomSource::new(seed);
    Kernel2D::new(side, (0..side * side).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
}

/// numpy-style "reflect" index: mirror about the edge sample.
pub fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * (n - 1);
    if period == 0 {
        return 0;
    }
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Direct spatial convolution `out(y, x) = sum k(i, j) img(y + r - i, x + r - j)`.
pub fn direct_convolve(plane: &[f64], h: usize, w: usize, k: &Kernel2D) -> Vec<f64> {
    let r = k.radius() as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for i in 0..k.side() as isize {
                for j in 0..k.side() as isize {
                    let sy = mirror(y + r - i, h);
                    let sx = mirror(x + r - j, w);
                    acc += k.at(i as usize, j as usize) * plane[sy * w + sx];
                }
            }
            out[(y * w as isize + x) as usize] = acc;
        }
    }
    out
}

/// Four-neighbour interpolation at `p - d`, clamped to the image.
pub fn bilinear_warp_oracle(img: &ImageBuffer, field: &MotionField) -> Vec<f64> {
    let (h, w) = img.dims();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = field.at(y, x);
            let sy = (y as f64 - dy).max(0.0).min((h - 1) as f64);
            let sx = (x as f64 - dx).max(0.0).min((w - 1) as f64);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (ty, tx) = (sy - y0 as f64, sx - x0 as f64);
            let v = img.get(0, y0, x0) * (1.0 - ty) * (1.0 - tx)
                + img.get(0, y0, x1) * (1.0 - ty) * tx
                + img.get(0, y1, x0) * ty * (1.0 - tx)
                + img.get(0, y1, x1) * ty * tx;
            out.push(v);
        }
    }
    out
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn relative_rmse(a: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(reference).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = reference.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}
