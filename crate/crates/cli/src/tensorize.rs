//! Image to tensor conversion.

use std::path::Path;

use anyhow::{Context, Result};
use image::imageops::{self, FilterType};
use tngps_core::format;
use tngps_core::tensor::Tensor;

pub const SIDE: u32 = 256;
pub const SHAPE: [usize; 8] = [4; 8];

/// Grayscale, bilinear resize to 256x256, scale to [0, 1] and reshape
/// row-major to (4,)x8.
pub fn image_tensor(img: &image::DynamicImage) -> Tensor {
    let gray = img.to_luma8();
    let resized = imageops::resize(&gray, SIDE, SIDE, FilterType::Triangle);
    let data = resized.as_raw().iter().map(|&p| f64::from(p) / 255.0).collect();
    Tensor::new(SHAPE.to_vec(), data).expect("256x256 pixels fill (4,)x8")
}

pub fn tensorize_image(path: &Path, out: &Path) -> Result<()> {
    let img = image::open(path).with_context(|| format!("reading image {}", path.display()))?;
    format::save(out, &image_tensor(&img)).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{DynamicImage, GrayImage, Luma, Rgb, RgbImage};

    #[test]
    fn white_image_is_all_ones() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(37, 80, Rgb([255, 255, 255])));
        let t = image_tensor(&img);
        assert_eq!(t.shape(), &SHAPE);
        assert_eq!(t.len(), 65536);
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn row_major_layout() {
        let img = GrayImage::from_fn(256, 256, |x, y| Luma([((x + y) % 256) as u8]));
        let t = image_tensor(&DynamicImage::ImageLuma8(img));
        // pixel (row 1, col 2) sits at flat index 1 * 256 + 2
        assert_eq!(t.data()[258], 3.0 / 255.0);
    }
}
