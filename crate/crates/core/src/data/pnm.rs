//! Binary PPM (P6) / PGM (P5) export.

use std::fs;
use std::path::Path;

use super::DataError;
use crate::model::Image;

fn to_byte(v: f64) -> u8 {
    // round half up
    (v * 255.0 + 0.5).floor() as u8
}

pub(crate) fn encode_pnm(image: &Image) -> Result<Vec<u8>, String> {
    let magic = match image.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(format!("cannot write {c}-channel image as PPM/PGM")),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    let mut clamped = 0usize;
    out.extend(image.pixels.iter().map(|&v| {
        let c = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        if c != v {
            clamped += 1;
        }
        to_byte(c)
    }));
    if clamped > 0 {
        log::warn!("{clamped} pixel values outside [0, 1] were clamped");
    }
    Ok(out)
}

/// Writes `image` as P6 (3 channels) or P5 (1 channel), 8 bits per sample.
pub fn write_image(image: &Image, path: &Path) -> Result<(), DataError> {
    let bytes = encode_pnm(image).map_err(|m| DataError::format(path, m))?;
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
pub(crate) fn decode_pnm(bytes: &[u8]) -> Image {
    let text_end = bytes.iter().enumerate().filter(|(_, b)| **b == b'\n').nth(2).unwrap().0 + 1;
    let header = std::str::from_utf8(&bytes[..text_end]).unwrap();
    let mut it = header.split_whitespace();
    let channels = if it.next().unwrap() == "P6" { 3 } else { 1 };
    let width: usize = it.next().unwrap().parse().unwrap();
    let height: usize = it.next().unwrap().parse().unwrap();
    let pixels = bytes[text_end..].iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(height, width, channels, pixels)
}
