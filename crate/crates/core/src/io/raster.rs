//! Grayscale raster images (PNG, PGM) as intensities in `[0, 1]`.

use std::path::Path;

use image::{ColorType, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::grid::GrayImage;

/// Loads an 8- or 16-bit image, converting color to luma.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => img
            .to_luma8()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / u8::MAX as f32)
            .collect(),
        _ => img
            .to_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / u16::MAX as f32)
            .collect(),
    };
    Ok(GrayImage::from_vec(h, w, data))
}

/// Saves as 16-bit grayscale; the format follows the extension.
pub fn save_gray_png16(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let raw: Vec<u16> = image
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * u16::MAX as f32).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(image.width() as u32, image.height() as u32, raw).expect("buffer size matches");
    buf.save(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(4, 5, |y, x| (y * 5 + x) as f32 / 19.0);
        let p = dir.path().join("a.png");
        save_gray_png16(&p, &img).unwrap();
        let back = load_gray(&p).unwrap();
        assert_eq!(back.shape(), (4, 5));
        for (a, b) in img.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }
    }

    #[test]
    fn pgm8_is_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(2, 1, vec![0, 255]).unwrap();
        buf.save(&p).unwrap();
        let img = load_gray(&p).unwrap();
        assert_eq!(img.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(load_gray("/nonexistent/x.png").is_err());
    }
}
