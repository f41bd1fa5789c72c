//! PNG export of color, scalar, normal and mask images, and PNG decoding
//! of color images and masks (8 or 16 bits per channel).
//!
//! PNGs are for visualization and masks; float data travels as PFM.

use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use super::{read_bytes, write_bytes, FormatError, FormatErrorKind, IoError};
use crate::image::{Mask, RgbImage, ScalarMap};

const FORMAT: &str = "png";

fn encode(w: usize, h: usize, data: &[u8], color: ExtendedColorType) -> Vec<u8> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(data, w as u32, h as u32, color)
        .expect("in-memory PNG encoding of a well-sized buffer cannot fail");
    out
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit RGB with channels clamped to `[0, 1]`.
pub fn encode_rgb8(img: &RgbImage) -> Vec<u8> {
    let data: Vec<u8> = img.as_slice().iter().flat_map(|c| c.map(quantize8)).collect();
    encode(img.width(), img.height(), &data, ExtendedColorType::Rgb8)
}

/// Normals mapped from `[-1, 1]` to `[0, 255]` per channel.
pub fn encode_normals8(img: &RgbImage) -> Vec<u8> {
    let data: Vec<u8> = img
        .as_slice()
        .iter()
        .flat_map(|c| c.map(|v| quantize8(0.5 * (v + 1.0))))
        .collect();
    encode(img.width(), img.height(), &data, ExtendedColorType::Rgb8)
}

/// 8-bit gray mapping `lo..hi` linearly to `0..255`.
pub fn encode_gray8(map: &ScalarMap, lo: f64, hi: f64) -> Vec<u8> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data: Vec<u8> = map.as_slice().iter().map(|v| quantize8((v - lo) / span)).collect();
    encode(map.width(), map.height(), &data, ExtendedColorType::L8)
}

/// 16-bit gray mapping `lo..hi` linearly to `0..65535`.
pub fn encode_gray16(map: &ScalarMap, lo: f64, hi: f64) -> Vec<u8> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data: Vec<u8> = map
        .as_slice()
        .iter()
        .map(|v| (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16)
        .flat_map(u16::to_ne_bytes)
        .collect();
    encode(map.width(), map.height(), &data, ExtendedColorType::L16)
}

pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let data: Vec<u8> = mask.as_slice().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode(mask.width(), mask.height(), &data, ExtendedColorType::L8)
}

/// False-color rendering of `map` over `lo..hi` (dark blue through red to
/// yellow).
pub fn encode_heatmap(map: &ScalarMap, lo: f64, hi: f64) -> Vec<u8> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data: Vec<u8> = map
        .as_slice()
        .iter()
        .flat_map(|v| {
            let t = ((v - lo) / span).clamp(0.0, 1.0);
            [quantize8(1.5 * t), quantize8(2.0 * t - 1.0), quantize8(0.5 - t)]
        })
        .collect();
    encode(map.width(), map.height(), &data, ExtendedColorType::Rgb8)
}

fn decode_dynamic(bytes: &[u8]) -> Result<DynamicImage, FormatError> {
    const SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";
    let n = bytes.len().min(SIGNATURE.len());
    if let Some(i) = (0..n).find(|&i| bytes[i] != SIGNATURE[i]) {
        return Err(FormatError::new(FORMAT, FormatErrorKind::MalformedHeader, i, "not a PNG signature"));
    }
    if bytes.len() < SIGNATURE.len() {
        return Err(FormatError::new(FORMAT, FormatErrorKind::Truncated, bytes.len(), "file ends inside the signature"));
    }
    image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| {
        let kind = match &e {
            image::ImageError::IoError(_) => FormatErrorKind::Truncated,
            _ => FormatErrorKind::InvalidValue,
        };
        let at = if kind == FormatErrorKind::Truncated { bytes.len() } else { SIGNATURE.len() };
        FormatError::new(FORMAT, kind, at, e.to_string())
    })
}

/// Color image with channels scaled to `[0, 1]` regardless of bit depth.
pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage, FormatError> {
    let img = decode_dynamic(bytes)?.into_rgb32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0.map(f64::from)).collect();
    Ok(RgbImage::from_vec(w, h, data))
}

/// Mask set where the luminance exceeds half of the channel range.
pub fn decode_mask(bytes: &[u8]) -> Result<Mask, FormatError> {
    let img = decode_dynamic(bytes)?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0[0] >= 32768).collect();
    Ok(Mask::from_vec(w, h, data))
}

pub fn read_rgb(path: &Path) -> Result<RgbImage, IoError> {
    decode_rgb(&read_bytes(path)?).map_err(|e| IoError::format(path, e))
}

pub fn read_mask(path: &Path) -> Result<Mask, IoError> {
    decode_mask(&read_bytes(path)?).map_err(|e| IoError::format(path, e))
}

pub fn write_png(path: &Path, encoded: &[u8]) -> Result<(), IoError> {
    write_bytes(path, encoded)
}
