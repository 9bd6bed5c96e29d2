//! PNG input and output.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer as RawImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

/// Decodes any supported image into `[0, 1]` intensities. Grayscale inputs
/// give one channel, everything else three; alpha is dropped.
pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    Ok(from_dynamic(&image::open(path)?))
}

pub fn from_dynamic(img: &DynamicImage) -> ImageBuffer {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb32f();
        let planes = (0..3).map(|c| rgb.pixels().map(|p| p.0[c] as f64).collect()).collect();
        ImageBuffer::from_planes(h, w, planes).expect("decoded pixels are finite")
    } else {
        let luma = img.to_luma32f();
        ImageBuffer::from_planes(h, w, vec![luma.pixels().map(|p| p.0[0] as f64).collect()])
            .expect("decoded pixels are finite")
    }
}

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// Clamps to `[0, 1]` and quantizes. Supports one or three channels.
pub fn to_dynamic(img: &ImageBuffer, depth: BitDepth) -> Result<DynamicImage> {
    let (h, w) = img.dims();
    let c = img.channels();
    ensure!(c == 1 || c == 3, "only 1- or 3-channel images can be encoded, got {c}");
    let (w32, h32) = (w as u32, h as u32);
    let px = |ch: usize, x: u32, y: u32| img.get(ch, y as usize, x as usize);
    Ok(match (c, depth) {
        (1, BitDepth::Eight) => {
            DynamicImage::ImageLuma8(GrayImage::from_fn(w32, h32, |x, y| Luma([quantize(px(0, x, y), 255.0) as u8])))
        }
        (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(RawImage::<Luma<u16>, _>::from_fn(w32, h32, |x, y| {
            Luma([quantize(px(0, x, y), 65535.0) as u16])
        })),
        (_, BitDepth::Eight) => DynamicImage::ImageRgb8(RgbImage::from_fn(w32, h32, |x, y| {
            Rgb(std::array::from_fn(|ch| quantize(px(ch, x, y), 255.0) as u8))
        })),
        (_, BitDepth::Sixteen) => DynamicImage::ImageRgb16(RawImage::<Rgb<u16>, _>::from_fn(w32, h32, |x, y| {
            Rgb(std::array::from_fn(|ch| quantize(px(ch, x, y), 65535.0) as u16))
        })),
    })
}

pub fn write_png(img: &ImageBuffer, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    to_dynamic(img, depth)?.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
