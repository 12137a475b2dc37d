//! PNG and PGM read/write. Scalars map to bytes by `round(v * 255)`.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{ImageError, Result};
use crate::image::Image;
use crate::LabelMask;

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_u8(b: u8) -> f32 {
    b as f32 / 255.0
}

fn codec_err(path: &Path, e: impl std::fmt::Display) -> ImageError {
    ImageError::Codec { path: path.display().to_string(), message: e.to_string() }
}

fn to_dynamic(img: &Image) -> DynamicImage {
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    if img.channels() == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer length matches"))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer length matches"))
    }
}

/// Writes an 8-bit PNG (grayscale or RGB).
pub fn write_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    to_dynamic(img).save_with_format(path, image::ImageFormat::Png).map_err(|e| codec_err(path, e))
}

/// Encodes to PNG bytes in memory.
pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    to_dynamic(img)
        .write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| codec_err(Path::new("<memory>"), e))?;
    Ok(buf.into_inner())
}

/// Reads a PNG; grayscale stays single-channel, anything else becomes RGB.
pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let dynimg = image::open(path).map_err(|e| codec_err(path, e))?;
    Ok(from_dynamic(dynimg))
}

fn from_dynamic(dynimg: DynamicImage) -> Image {
    match dynimg {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            let data = g.into_raw().into_iter().map(from_u8).collect();
            Image::from_vec(w as usize, h as usize, 1, data).expect("valid gray image")
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            let data = rgb.into_raw().into_iter().map(from_u8).collect();
            Image::from_vec(w as usize, h as usize, 3, data).expect("valid rgb image")
        }
    }
}

/// Writes a binary (P5) PGM; color images are reduced to their channel mean.
pub fn write_pgm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let gray = img.to_gray();
    let mut bytes = format!("P5\n{} {}\n255\n", gray.width(), gray.height()).into_bytes();
    bytes.extend(gray.data().iter().map(|&v| to_u8(v)));
    std::fs::write(path, bytes).map_err(|source| ImageError::Io { path: path.display().to_string(), source })
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let dynimg = image::open(path).map_err(|e| codec_err(path, e))?;
    Ok(from_dynamic(DynamicImage::ImageLuma8(dynimg.to_luma8())))
}

/// Reads either format based on the extension.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => read_pgm(path),
        _ => read_png(path),
    }
}

/// Writes a mask as a single-channel PNG whose bytes are the raw label ids.
pub fn write_label_png(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = mask.labels().iter().map(|&l| l.min(255) as u8).collect();
    GrayImage::from_raw(mask.width() as u32, mask.height() as u32, bytes)
        .expect("buffer length matches")
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| codec_err(path, e))
}

pub fn read_label_png(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let g = image::open(path).map_err(|e| codec_err(path, e))?.to_luma8();
    let (w, h) = g.dimensions();
    LabelMask::from_vec(w as usize, h as usize, g.into_raw().into_iter().map(u16::from).collect())
}
