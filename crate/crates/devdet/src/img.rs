//! Pixel buffers. Images are `Array3<f64>` in channel-height-width order with
//! values in [0,1] while in memory; 8-bit PNG at rest.

use crate::error::{Error, Result};
use ndarray::Array3;
use std::path::Path;

pub type Image = Array3<f64>;

/// Quantize to 8-bit. Round-to-nearest, clamped.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let (c, h, w) = img.dim();
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let mut buf = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                buf[(y * w + x) * 3 + ch] = to_u8(img[[ch, y, x]]);
            }
        }
    }
    let rgb: image::RgbImage = image::ImageBuffer::from_raw(w as u32, h as u32, buf)
        .expect("buffer size matches dimensions");
    rgb.save(path)
        .map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })
}

pub fn load_png(path: &Path) -> Result<Image> {
    let dynimg = image::open(path)
        .map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })?;
    let rgb = dynimg.to_rgb8();
    let (w, h) = rgb.dimensions();
    let mut img = Array3::zeros((3, h as usize, w as usize));
    for (x, y, px) in rgb.enumerate_pixels() {
        for ch in 0..3 {
            img[[ch, y as usize, x as usize]] = px.0[ch] as f64 / 255.0;
        }
    }
    Ok(img)
}

/// Mean squared-l2 pixel distance between two images.
pub fn l2_distance(a: &Image, b: &Image) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
